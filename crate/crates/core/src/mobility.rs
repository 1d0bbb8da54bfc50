//! Vehicle movement traces: Manhattan grid (city) and random waypoint
//! (highway) generators, ns-2 movement file import/export, and position
//! queries.
//!
//! Each waypoint carries the speed of the segment that starts at it. A
//! waypoint with speed 0 starts a pause; the vehicle sits still until the
//! next waypoint. The last waypoint of a vehicle has speed 0 and the vehicle
//! stays there.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const EPS: f64 = 1e-6;

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh * 1000.0 / 3600.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityTrace {
    pub bounds: (f64, f64),
    pub duration: f64,
    pub vehicles: Vec<Vec<Waypoint>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MobilityError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("time {time} outside [0, {duration}]")]
    TimeOutOfRange { time: f64, duration: f64 },
    #[error("no vehicle with index {0}")]
    UnknownVehicle(usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("vehicle {vehicle}, waypoint {index}: {reason}")]
    Invalid {
        vehicle: usize,
        index: usize,
        reason: String,
    },
}

/// Length of the straight segment between two points. Shared by generators
/// and the importer so arrival times round-trip exactly.
pub fn segment_length(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (bx - ax).hypot(by - ay)
}

fn arrival(t: f64, ax: f64, ay: f64, bx: f64, by: f64, speed: f64) -> f64 {
    t + segment_length(ax, ay, bx, by) / speed
}

fn vehicle_rng(seed: u64, vehicle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(vehicle as u64);
    rng
}

impl MobilityTrace {
    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    /// Vehicles that never move.
    pub fn stationary(positions: &[(f64, f64)], bounds: (f64, f64), duration: f64) -> Self {
        MobilityTrace {
            bounds,
            duration,
            vehicles: positions
                .iter()
                .map(|&(x, y)| {
                    vec![Waypoint {
                        time: 0.0,
                        x,
                        y,
                        speed: 0.0,
                    }]
                })
                .collect(),
        }
    }

    /// One vehicle per path; each path is visited at constant `speed` (m/s),
    /// starting at `start_time` after an initial pause.
    pub fn scripted(paths: &[(Vec<(f64, f64)>, f64, f64)], bounds: (f64, f64), duration: f64) -> Self {
        let vehicles = paths
            .iter()
            .map(|(points, speed, start_time)| {
                let (mut x, mut y) = points[0];
                let mut out = vec![Waypoint {
                    time: 0.0,
                    x,
                    y,
                    speed: 0.0,
                }];
                let mut t = 0.0;
                if *start_time > 0.0 {
                    t = *start_time;
                    out.push(Waypoint {
                        time: t,
                        x,
                        y,
                        speed: 0.0,
                    });
                }
                for &(nx, ny) in &points[1..] {
                    out.last_mut().unwrap().speed = *speed;
                    t = arrival(t, x, y, nx, ny, *speed);
                    x = nx;
                    y = ny;
                    out.push(Waypoint {
                        time: t,
                        x,
                        y,
                        speed: 0.0,
                    });
                }
                out
            })
            .collect();
        MobilityTrace {
            bounds,
            duration,
            vehicles,
        }
    }

    /// Linear interpolation between the bracketing waypoints.
    pub fn position_at(&self, vehicle: usize, time: f64) -> Result<(f64, f64), MobilityError> {
        if !(0.0..=self.duration).contains(&time) {
            return Err(MobilityError::TimeOutOfRange {
                time,
                duration: self.duration,
            });
        }
        let wps = self
            .vehicles
            .get(vehicle)
            .ok_or(MobilityError::UnknownVehicle(vehicle))?;
        Ok(interpolate(wps, time))
    }

    pub fn speed_at(&self, vehicle: usize, time: f64) -> Result<f64, MobilityError> {
        let wps = self
            .vehicles
            .get(vehicle)
            .ok_or(MobilityError::UnknownVehicle(vehicle))?;
        let i = wps.partition_point(|w| w.time <= time);
        Ok(if i == 0 { 0.0 } else { wps[i - 1].speed })
    }

    /// Checks the structural invariants. `grid` enables the Manhattan
    /// lattice check for the given block size.
    pub fn validate(&self, max_speed_mps: f64, grid: Option<f64>) -> Result<(), MobilityError> {
        for (v, wps) in self.vehicles.iter().enumerate() {
            let fail = |index: usize, reason: String| MobilityError::Invalid {
                vehicle: v,
                index,
                reason,
            };
            for (i, w) in wps.iter().enumerate() {
                if w.x < -EPS || w.y < -EPS || w.x > self.bounds.0 + EPS || w.y > self.bounds.1 + EPS {
                    return Err(fail(i, format!("({}, {}) out of bounds", w.x, w.y)));
                }
                if w.speed < 0.0 || w.speed > max_speed_mps + EPS {
                    return Err(fail(i, format!("speed {} exceeds cap", w.speed)));
                }
                if let Some(block) = grid {
                    if !on_grid_line(w.x, block) && !on_grid_line(w.y, block) {
                        return Err(fail(i, "off the street grid".into()));
                    }
                }
            }
            for (i, pair) in wps.windows(2).enumerate() {
                let (a, b) = (pair[0], pair[1]);
                if b.time <= a.time {
                    return Err(fail(i + 1, "time not increasing".into()));
                }
                let len = segment_length(a.x, a.y, b.x, b.y);
                if a.speed == 0.0 {
                    if len > EPS {
                        return Err(fail(i, "moves during a pause".into()));
                    }
                    continue;
                }
                let implied = len / (b.time - a.time);
                if (implied - a.speed).abs() > 1e-6 * a.speed.max(1.0) {
                    return Err(fail(i, format!("implied speed {implied} != {}", a.speed)));
                }
                if grid.is_some() && (a.x - b.x).abs() > EPS && (a.y - b.y).abs() > EPS {
                    return Err(fail(i, "diagonal street segment".into()));
                }
            }
        }
        Ok(())
    }

    /// Native CSV export: `vehicle_id,time_s,x_m,y_m,speed_mps`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vehicle_id,time_s,x_m,y_m,speed_mps\n");
        for (v, wps) in self.vehicles.iter().enumerate() {
            for w in wps {
                let _ = writeln!(out, "{v},{},{},{},{}", w.time, w.x, w.y, w.speed);
            }
        }
        out
    }

    /// ns-2 movement file. Pauses are implicit in the gaps between
    /// `setdest` times.
    pub fn to_ns2(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# duration: {}", self.duration);
        let _ = writeln!(out, "# bounds: {} {}", self.bounds.0, self.bounds.1);
        for (v, wps) in self.vehicles.iter().enumerate() {
            let _ = writeln!(out, "$node_({v}) set X_ {}", wps[0].x);
            let _ = writeln!(out, "$node_({v}) set Y_ {}", wps[0].y);
            let _ = writeln!(out, "$node_({v}) set Z_ 0.0");
        }
        for (v, wps) in self.vehicles.iter().enumerate() {
            for pair in wps.windows(2) {
                if pair[0].speed > 0.0 {
                    let _ = writeln!(
                        out,
                        "$ns_ at {} \"$node_({v}) setdest {} {} {}\"",
                        pair[0].time, pair[1].x, pair[1].y, pair[0].speed
                    );
                }
            }
        }
        out
    }

    pub fn from_ns2(text: &str) -> Result<Self, MobilityError> {
        let mut starts: Vec<(Option<f64>, Option<f64>)> = Vec::new();
        let mut moves: Vec<(usize, usize, f64, f64, f64, f64)> = Vec::new();
        let mut duration = None;
        let mut bounds = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            let err = |reason: &str| MobilityError::Parse {
                line: line_no,
                reason: reason.to_string(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(d) = comment.strip_prefix("duration:") {
                    duration = Some(parse_num(d.trim()).ok_or_else(|| err("bad duration"))?);
                } else if let Some(b) = comment.strip_prefix("bounds:") {
                    let parts: Vec<f64> = b.split_whitespace().filter_map(parse_num).collect();
                    if parts.len() != 2 {
                        return Err(err("bad bounds"));
                    }
                    bounds = Some((parts[0], parts[1]));
                }
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if let Some(node) = tokens.first().and_then(|t| parse_node(t)) {
                // $node_(i) set X_ value
                if tokens.len() != 4 || tokens[1] != "set" {
                    return Err(err("expected `$node_(i) set <axis> <value>`"));
                }
                let value = parse_num(tokens[3]).ok_or_else(|| err("bad coordinate"))?;
                if starts.len() <= node {
                    starts.resize(node + 1, (None, None));
                }
                match tokens[2] {
                    "X_" => starts[node].0 = Some(value),
                    "Y_" => starts[node].1 = Some(value),
                    "Z_" => {}
                    _ => return Err(err("unknown axis")),
                }
            } else if tokens.first() == Some(&"$ns_") {
                // $ns_ at t "$node_(i) setdest x y speed"
                if tokens.len() != 8 || tokens[1] != "at" || tokens[4] != "setdest" {
                    return Err(err("expected `$ns_ at <t> \"$node_(i) setdest <x> <y> <speed>\"`"));
                }
                let t = parse_num(tokens[2]).ok_or_else(|| err("bad time"))?;
                let node = tokens[3]
                    .strip_prefix('"')
                    .and_then(parse_node)
                    .ok_or_else(|| err("bad node reference"))?;
                let x = parse_num(tokens[5]).ok_or_else(|| err("bad x"))?;
                let y = parse_num(tokens[6]).ok_or_else(|| err("bad y"))?;
                let speed = tokens[7]
                    .strip_suffix('"')
                    .and_then(parse_num)
                    .filter(|s| *s > 0.0)
                    .ok_or_else(|| err("bad speed"))?;
                moves.push((line_no, node, t, x, y, speed));
            } else {
                return Err(err("unknown directive"));
            }
        }

        let mut vehicles = Vec::with_capacity(starts.len());
        for (node, start) in starts.iter().enumerate() {
            let (Some(x), Some(y)) = *start else {
                return Err(MobilityError::Parse {
                    line: 0,
                    reason: format!("node {node} has no initial position"),
                });
            };
            vehicles.push(vec![Waypoint {
                time: 0.0,
                x,
                y,
                speed: 0.0,
            }]);
        }
        // setdest lines of one node are applied in time order
        moves.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.total_cmp(&b.2)));
        for (line, node, t, x, y, speed) in moves {
            let wps = vehicles.get_mut(node).ok_or(MobilityError::Parse {
                line,
                reason: format!("node {node} has no initial position"),
            })?;
            let last = *wps.last().unwrap();
            if t < last.time {
                // new destination before arrival: cut the running segment
                let (cx, cy) = interpolate(wps, t);
                wps.pop();
                wps.push(Waypoint {
                    time: t,
                    x: cx,
                    y: cy,
                    speed,
                });
            } else if t > last.time {
                wps.push(Waypoint {
                    time: t,
                    x: last.x,
                    y: last.y,
                    speed,
                });
            } else {
                wps.last_mut().unwrap().speed = speed;
            }
            let from = *wps.last().unwrap();
            wps.push(Waypoint {
                time: arrival(t, from.x, from.y, x, y, speed),
                x,
                y,
                speed: 0.0,
            });
        }

        let duration = duration.unwrap_or_else(|| {
            vehicles
                .iter()
                .filter_map(|w| w.last().map(|w| w.time))
                .fold(0.0, f64::max)
        });
        let bounds = bounds.unwrap_or_else(|| {
            vehicles
                .iter()
                .flatten()
                .fold((0.0, 0.0), |(bx, by), w| (f64::max(bx, w.x), f64::max(by, w.y)))
        });
        Ok(MobilityTrace {
            bounds,
            duration,
            vehicles,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanParams {
    pub grid_block: f64,
    /// km/h
    pub max_speed: f64,
    /// km/h. Each block is driven at a speed drawn from `[min_speed, max_speed]`.
    pub min_speed: f64,
    pub turn_probability: f64,
    pub bounds: (f64, f64),
    pub vehicle_count: usize,
    pub duration: f64,
    pub seed: u64,
}

impl Default for ManhattanParams {
    fn default() -> Self {
        ManhattanParams {
            grid_block: 250.0,
            max_speed: 60.0,
            min_speed: 30.0,
            turn_probability: 0.5,
            bounds: (2000.0, 2000.0),
            vehicle_count: 30,
            duration: 100.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwpParams {
    /// km/h
    pub max_speed: f64,
    /// km/h, strictly positive.
    pub min_speed: f64,
    pub pause: f64,
    pub bounds: (f64, f64),
    pub vehicle_count: usize,
    pub duration: f64,
    pub seed: u64,
}

impl Default for RwpParams {
    fn default() -> Self {
        RwpParams {
            max_speed: 120.0,
            min_speed: 80.0,
            pause: 0.0,
            bounds: (2000.0, 2000.0),
            vehicle_count: 30,
            duration: 100.0,
            seed: 1,
        }
    }
}

fn check_speeds(min: f64, max: f64) -> Result<(), MobilityError> {
    if !(min > 0.0 && max >= min && max.is_finite()) {
        return Err(MobilityError::InvalidParams(format!("speed range [{min}, {max}] km/h")));
    }
    Ok(())
}

/// City model: vehicles drive along a square street lattice, one block per
/// segment, turning at intersections with `turn_probability`.
pub fn generate_manhattan(p: &ManhattanParams) -> Result<MobilityTrace, MobilityError> {
    check_speeds(p.min_speed, p.max_speed)?;
    if !(p.grid_block > 0.0) || !(p.duration > 0.0) {
        return Err(MobilityError::InvalidParams(
            "block and duration must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p.turn_probability) {
        return Err(MobilityError::InvalidParams("turn probability outside [0, 1]".into()));
    }
    let cols = (p.bounds.0 / p.grid_block + EPS).floor() as i64;
    let rows = (p.bounds.1 / p.grid_block + EPS).floor() as i64;
    if cols < 0 || rows < 0 || (cols == 0 && rows == 0) {
        return Err(MobilityError::InvalidParams("bounds hold no street block".into()));
    }
    let (vmin, vmax) = (kmh_to_mps(p.min_speed), kmh_to_mps(p.max_speed));
    const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    let inside = |i: i64, j: i64| (0..=cols).contains(&i) && (0..=rows).contains(&j);

    let vehicles = (0..p.vehicle_count)
        .map(|v| {
            let mut rng = vehicle_rng(p.seed, v);
            let (mut i, mut j) = (rng.gen_range(0..=cols), rng.gen_range(0..=rows));
            let open =
                |i: i64, j: i64| -> Vec<usize> { (0..4).filter(|&d| inside(i + DIRS[d].0, j + DIRS[d].1)).collect() };
            let first = open(i, j);
            let mut dir = first[rng.gen_range(0..first.len())];
            let mut t = 0.0;
            let mut wps = vec![Waypoint {
                time: 0.0,
                x: i as f64 * p.grid_block,
                y: j as f64 * p.grid_block,
                speed: 0.0,
            }];
            while t < p.duration {
                let options = open(i, j);
                let straight = options.contains(&dir);
                let turns: Vec<usize> = options
                    .iter()
                    .copied()
                    .filter(|&d| d != dir && d != (dir + 2) % 4)
                    .collect();
                dir = if !turns.is_empty() && (!straight || rng.gen_bool(p.turn_probability)) {
                    turns[rng.gen_range(0..turns.len())]
                } else if straight {
                    dir
                } else {
                    (dir + 2) % 4
                };
                let speed = if vmax > vmin { rng.gen_range(vmin..=vmax) } else { vmin };
                let from = *wps.last().unwrap();
                i += DIRS[dir].0;
                j += DIRS[dir].1;
                let (x, y) = (i as f64 * p.grid_block, j as f64 * p.grid_block);
                wps.last_mut().unwrap().speed = speed;
                t = arrival(t, from.x, from.y, x, y, speed);
                wps.push(Waypoint {
                    time: t,
                    x,
                    y,
                    speed: 0.0,
                });
            }
            wps
        })
        .collect();
    Ok(MobilityTrace {
        bounds: p.bounds,
        duration: p.duration,
        vehicles,
    })
}

/// Highway model: random waypoint with a pause before every leg.
pub fn generate_rwp(p: &RwpParams) -> Result<MobilityTrace, MobilityError> {
    check_speeds(p.min_speed, p.max_speed)?;
    if !(p.duration > 0.0) || p.pause < 0.0 || !(p.bounds.0 > 0.0 || p.bounds.1 > 0.0) {
        return Err(MobilityError::InvalidParams("duration, pause or bounds".into()));
    }
    let (vmin, vmax) = (kmh_to_mps(p.min_speed), kmh_to_mps(p.max_speed));
    let draw = |rng: &mut ChaCha8Rng| (rng.gen::<f64>() * p.bounds.0, rng.gen::<f64>() * p.bounds.1);
    let vehicles = (0..p.vehicle_count)
        .map(|v| {
            let mut rng = vehicle_rng(p.seed, v);
            let (x0, y0) = draw(&mut rng);
            let mut wps = vec![Waypoint {
                time: 0.0,
                x: x0,
                y: y0,
                speed: 0.0,
            }];
            let mut t = 0.0;
            loop {
                if p.pause > 0.0 {
                    t += p.pause;
                    if t >= p.duration {
                        break;
                    }
                    let at = *wps.last().unwrap();
                    wps.push(Waypoint { time: t, ..at });
                }
                let from = *wps.last().unwrap();
                let (x, y) = loop {
                    let d = draw(&mut rng);
                    if segment_length(from.x, from.y, d.0, d.1) > 1.0 {
                        break d;
                    }
                };
                let speed = if vmax > vmin { rng.gen_range(vmin..=vmax) } else { vmin };
                wps.last_mut().unwrap().speed = speed;
                t = arrival(t, from.x, from.y, x, y, speed);
                wps.push(Waypoint {
                    time: t,
                    x,
                    y,
                    speed: 0.0,
                });
                if t >= p.duration {
                    break;
                }
            }
            wps
        })
        .collect();
    Ok(MobilityTrace {
        bounds: p.bounds,
        duration: p.duration,
        vehicles,
    })
}

fn parse_num(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_node(token: &str) -> Option<usize> {
    token.strip_prefix("$node_(")?.strip_suffix(')')?.parse().ok()
}

fn on_grid_line(coord: f64, block: f64) -> bool {
    let r = coord.rem_euclid(block);
    r < EPS || block - r < EPS
}

fn interpolate(wps: &[Waypoint], time: f64) -> (f64, f64) {
    let i = wps.partition_point(|w| w.time <= time);
    if i == 0 {
        return (wps[0].x, wps[0].y);
    }
    let a = wps[i - 1];
    if i == wps.len() || a.speed == 0.0 {
        return (a.x, a.y);
    }
    let b = wps[i];
    let frac = (time - a.time) / (b.time - a.time);
    (a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac)
}
