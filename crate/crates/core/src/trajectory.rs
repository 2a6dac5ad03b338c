//! Shared episode record: a state sequence plus the commanded actions that
//! produced it, with CSV persistence in the motion-log schema
//! `t,x,y,yaw,vx,vy,yawrate,fx,fy,tau`.

use crate::dynamics::State;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const TRAJECTORY_HEADER: &str = "t,x,y,yaw,vx,vy,yawrate,fx,fy,tau";

/// One episode: N+1 states and the N commanded actions between them.
/// `states[t]` is the state in which `actions[t]` was commanded.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<State>,
    pub actions: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn new(dt: f64, initial: State) -> Self {
        Trajectory {
            dt,
            states: vec![initial],
            actions: Vec::new(),
        }
    }

    pub fn push(&mut self, action: [f64; 3], next_state: State) {
        self.actions.push(action);
        self.states.push(next_state);
    }

    /// Number of transitions (= actions).
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(Error::state(format!(
                "trajectory has {} states for {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        if self.dt <= 0.0 {
            return Err(Error::state("trajectory dt must be positive"));
        }
        Ok(())
    }

    /// (x_t, u_t, x_{t+1}) triples.
    pub fn transitions(&self) -> impl Iterator<Item = (&State, &[f64; 3], &State)> {
        self.actions
            .iter()
            .enumerate()
            .map(|(t, u)| (&self.states[t], u, &self.states[t + 1]))
    }

    /// Per-step planar distance to the origin, over all N+1 states.
    pub fn distances(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.distance()).collect()
    }
}

/// Writes the motion-log CSV. The final row carries the terminal state with a
/// zero action placeholder (no action was commanded there).
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    traj.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for (t, state) in traj.states.iter().enumerate() {
        let a = traj.actions.get(t).copied().unwrap_or([0.0; 3]);
        let s = state.to_array();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            t as f64 * traj.dt,
            s[0],
            s[1],
            s[2],
            s[3],
            s[4],
            s[5],
            a[0],
            a[1],
            a[2]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::parse(path, 1, "empty trajectory file")),
    };
    if header.trim() != TRAJECTORY_HEADER {
        return Err(Error::parse(
            path,
            1,
            format!(
                "expected header `{TRAJECTORY_HEADER}`, found `{}`",
                header.trim()
            ),
        ));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 10 fields, found {}", fields.len()),
            ));
        }
        let mut vals = [0.0; 10];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.trim().parse::<f64>().map_err(|_| {
                Error::parse(path, lineno, format!("not a number: `{}`", f.trim()))
            })?;
        }
        times.push(vals[0]);
        states.push(State::from_array(&[
            vals[1], vals[2], vals[3], vals[4], vals[5], vals[6],
        ]));
        actions.push([vals[7], vals[8], vals[9]]);
    }
    if states.len() < 2 {
        return Err(Error::parse(path, 1, "trajectory needs at least 2 rows"));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(Error::parse(path, 2, "time column must be increasing"));
    }
    for (i, &t) in times.iter().enumerate() {
        if (t - i as f64 * dt).abs() > 1e-9 {
            return Err(Error::parse(path, i + 2, "time column is not uniformly spaced"));
        }
    }
    actions.pop(); // placeholder row for the terminal state
    let traj = Trajectory { dt, states, actions };
    traj.validate()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_default_variation, step_first_principle, DT};

    fn sample_trajectory(n: usize) -> Trajectory {
        let model = make_default_variation();
        let mut traj = Trajectory::new(DT, State::from_pose(1.0, -0.5, 0.2));
        let mut s = *traj.states.first().unwrap();
        for t in 0..n {
            let u = [(t as f64 * 0.7).sin() * 40.0, -20.0, 5.0];
            s = step_first_principle(&model, &s, u, [0.0; 3], [0.0; 3], DT);
            traj.push(u, s);
        }
        traj
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = sample_trajectory(25);
        write_trajectory(&traj, &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(traj, back);
    }

    #[test]
    fn transitions_are_fenceposted() {
        let traj = sample_trajectory(100);
        assert_eq!(traj.states.len(), 101);
        assert_eq!(traj.transitions().count(), 100);
        let (x0, _, x1) = traj.transitions().next().unwrap();
        assert_eq!(*x0, traj.states[0]);
        assert_eq!(*x1, traj.states[1]);
    }

    #[test]
    fn header_mismatch_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x,y\n0,0,0\n").unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn mismatched_lengths_fail_validation() {
        let traj = Trajectory {
            dt: DT,
            states: vec![State::zero()],
            actions: vec![[0.0; 3]],
        };
        assert!(traj.validate().is_err());
    }
}
