use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "step,time,vertex,x,y,z";

/// States `q_0 … q_N` of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub num_vertices: usize,
    pub timestep: f64,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(num_vertices: usize, timestep: f64) -> Self {
        Self {
            num_vertices,
            timestep,
            states: Vec::new(),
        }
    }

    pub fn push(&mut self, q: Vec<f64>) {
        assert_eq!(q.len(), 3 * self.num_vertices);
        self.states.push(q);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.timestep
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * self.num_vertices * self.states.len() + 32);
        out.push_str(TRAJECTORY_HEADER);
        out.push('\n');
        for (s, q) in self.states.iter().enumerate() {
            let t = self.time(s);
            for v in 0..self.num_vertices {
                let _ = writeln!(out, "{s},{t},{v},{:e},{:e},{:e}", q[3 * v], q[3 * v + 1], q[3 * v + 2]);
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the CSV written by [`Trajectory::to_csv`]. Rows must be grouped
    /// by step with vertices in order; the timestep is read from the times.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{TRAJECTORY_HEADER}`"),
                })
            }
        }
        let mut states: Vec<Vec<f64>> = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        let mut num_vertices: Option<usize> = None;
        for (i, line) in lines {
            let err = |message: String| Error::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", fields.len())));
            }
            let step: usize = fields[0]
                .parse()
                .map_err(|_| err(format!("bad step `{}`", fields[0])))?;
            let vertex: usize = fields[2]
                .parse()
                .map_err(|_| err(format!("bad vertex `{}`", fields[2])))?;
            let mut nums = [0.0; 4];
            for (k, f) in [1, 3, 4, 5].into_iter().enumerate() {
                nums[k] = fields[f]
                    .parse()
                    .ok()
                    .filter(|x: &f64| x.is_finite())
                    .ok_or_else(|| err(format!("bad number `{}`", fields[f])))?;
            }
            if step == states.len() && vertex == 0 {
                if let (Some(n), Some(prev)) = (num_vertices, states.last()) {
                    if prev.len() != 3 * n {
                        return Err(err(format!(
                            "step {} has {} vertices, expected {n}",
                            step - 1,
                            prev.len() / 3
                        )));
                    }
                } else if let Some(prev) = states.last() {
                    num_vertices = Some(prev.len() / 3);
                }
                states.push(Vec::new());
                times.push(nums[0]);
            }
            let count = states.len();
            match states.last_mut().filter(|_| step + 1 == count) {
                Some(q) if q.len() == 3 * vertex => q.extend_from_slice(&nums[1..]),
                _ => return Err(err(format!("row out of order (step {step}, vertex {vertex})"))),
            }
        }
        let Some(first) = states.first() else {
            return Err(Error::Parse {
                line: 1,
                message: "no rows".into(),
            });
        };
        let n = first.len() / 3;
        if let Some((s, _)) = states.iter().enumerate().find(|(_, q)| q.len() != 3 * n) {
            return Err(Error::Format(format!("step {s} has a different vertex count")));
        }
        let timestep = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Ok(Self {
            num_vertices: n,
            timestep,
            states,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}
