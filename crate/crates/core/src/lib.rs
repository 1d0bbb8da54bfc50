pub mod adversary;
pub mod crypto;
pub mod harness;
pub mod identity;
pub mod mobility;
pub mod netsim;
pub mod protocol;
pub mod revocation_analytics;
pub mod schemes;
