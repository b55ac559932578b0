//! Piecewise-constant controls and sampled trajectories, with CSV I/O.

use std::io::{BufRead, Write};

use crate::ode::hermite;
use crate::sets::ControlSet;
use crate::{Error, Result, Vector};

/// Tolerance for control-set membership.
pub const CONTROL_TOL: f64 = 1e-12;

/// Control held constant on `[grid[i], grid[i+1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal {
    grid: Vec<f64>,
    values: Vec<Vector>,
}

impl ControlSignal {
    /// `grid` runs from 0 to the horizon, strictly increasing, with one value per interval.
    pub fn new(grid: Vec<f64>, values: Vec<Vector>, set: &ControlSet) -> Result<Self> {
        if grid.len() < 2 || values.len() + 1 != grid.len() {
            return Err(Error::invalid("control needs n+1 breakpoints for n values"));
        }
        if grid[0] != 0.0 {
            return Err(Error::invalid("control grid must start at 0"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("control grid must be strictly increasing"));
        }
        if let Some(bad) = values.iter().find(|u| !set.contains(u, CONTROL_TOL)) {
            return Err(Error::invalid(format!(
                "control value {:?} lies outside U",
                bad.as_slice()
            )));
        }
        Ok(ControlSignal { grid, values })
    }

    pub fn constant(u: Vector, horizon: f64, set: &ControlSet) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![u], set)
    }

    /// `first` on `[0, switch]`, `second` afterwards. A switch at either end
    /// collapses to a constant control.
    pub fn bang_bang(switch: f64, first: Vector, second: Vector, horizon: f64, set: &ControlSet) -> Result<Self> {
        if switch >= horizon {
            Self::constant(first, horizon, set)
        } else if switch <= 0.0 {
            Self::constant(second, horizon, set)
        } else {
            Self::new(vec![0.0, switch, horizon], vec![first, second], set)
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Right-continuous value; the last interval extends to the horizon.
    pub fn value_at(&self, t: f64) -> &Vector {
        let idx = self.grid.partition_point(|&g| g <= t);
        let i = idx.saturating_sub(1).min(self.values.len() - 1);
        &self.values[i]
    }
}

/// A sampled trajectory.
///
/// `controls[i]` is the control on `[grid[i], grid[i+1])`. `velocities`, when
/// present, hold `ẋ` at the nodes and enable Hermite interpolation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<Vector>,
    pub velocities: Option<Vec<Vector>>,
    pub psi: Vec<f64>,
    pub xi: Vec<f64>,
    pub controls: Vec<Vector>,
}

impl Trajectory {
    pub fn new(
        grid: Vec<f64>,
        states: Vec<Vector>,
        velocities: Option<Vec<Vector>>,
        psi: Vec<f64>,
        xi: Vec<f64>,
        controls: Vec<Vector>,
    ) -> Result<Self> {
        let n = grid.len();
        if n < 2 {
            return Err(Error::invalid("trajectory needs at least two nodes"));
        }
        if states.len() != n || psi.len() != n || xi.len() != n || controls.len() + 1 != n {
            return Err(Error::GridMismatch(format!(
                "grid {n}, states {}, psi {}, xi {}, controls {}",
                states.len(),
                psi.len(),
                xi.len(),
                controls.len()
            )));
        }
        if velocities.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::GridMismatch("velocity samples do not match the grid".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trajectory grid must be strictly increasing"));
        }
        Ok(Trajectory {
            grid,
            states,
            velocities,
            psi,
            xi,
            controls,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn control_dim(&self) -> usize {
        self.controls[0].len()
    }

    pub fn initial_state(&self) -> &Vector {
        &self.states[0]
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().unwrap()
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Control on the interval containing `t` (the last one at the horizon).
    pub fn control_at_node(&self, i: usize) -> &Vector {
        &self.controls[i.min(self.controls.len() - 1)]
    }

    fn interval(&self, t: f64) -> usize {
        let idx = self.grid.partition_point(|&g| g <= t);
        idx.saturating_sub(1).min(self.grid.len() - 2)
    }

    /// Piecewise-linear interpolation of the states.
    pub fn linear_at(&self, t: f64) -> Vector {
        let i = self.interval(t);
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        &self.states[i] * (1.0 - s) + &self.states[i + 1] * s
    }

    /// Hermite interpolation when velocities are stored, linear otherwise.
    pub fn state_at(&self, t: f64) -> Vector {
        match &self.velocities {
            Some(v) => {
                let i = self.interval(t);
                let tc = t.clamp(self.grid[i], self.grid[i + 1]);
                hermite(
                    self.grid[i],
                    &self.states[i],
                    &v[i],
                    self.grid[i + 1],
                    &self.states[i + 1],
                    &v[i + 1],
                    tc,
                )
            }
            None => self.linear_at(t),
        }
    }

    /// Sup-norm distance to `other` over a uniform grid of `points` samples,
    /// both sides linearly interpolated.
    pub fn sup_gap(&self, other: &Trajectory, points: usize) -> f64 {
        let t_end = self.horizon().min(other.horizon());
        (0..points)
            .map(|i| {
                let t = t_end * i as f64 / (points - 1) as f64;
                (self.linear_at(t) - other.linear_at(t)).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Writes `t,x1..xn,u1..um,psi,xi` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.push("psi".into());
        header.push("xi".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt17(self.grid[i])];
            row.extend(self.states[i].iter().map(|&v| fmt17(v)));
            row.extend(self.control_at_node(i).iter().map(|&v| fmt17(v)));
            row.push(fmt17(self.psi[i]));
            row.push(fmt17(self.xi[i]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads the format written by [`Trajectory::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let indexed = |prefix: char| {
            cols.iter()
                .filter(|c| c.strip_prefix(prefix).is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit())))
                .count()
        };
        let (n, m) = (indexed('x'), indexed('u'));
        if cols.len() != n + m + 3 || cols[0] != "t" || cols[cols.len() - 2] != "psi" || cols[cols.len() - 1] != "xi" {
            return Err(Error::Parse(format!("unexpected trajectory header '{header}'")));
        }
        let (mut grid, mut states, mut psi, mut xi, mut controls) = (vec![], vec![], vec![], vec![], vec![]);
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Parse(format!("line {}: expected {} fields", ln + 2, cols.len())));
            }
            grid.push(vals[0]);
            states.push(Vector::from_column_slice(&vals[1..1 + n]));
            controls.push(Vector::from_column_slice(&vals[1 + n..1 + n + m]));
            psi.push(vals[1 + n + m]);
            xi.push(vals[2 + n + m]);
        }
        controls.pop();
        Trajectory::new(grid, states, None, psi, xi, controls)
    }
}

/// Fixed-format float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn control_lookup_is_right_continuous() {
        let set = ControlSet::interval(-1.0, 1.0);
        let u = ControlSignal::bang_bang(0.5, v(&[1.0]), v(&[-1.0]), 1.0, &set).unwrap();
        assert_eq!(u.value_at(0.0)[0], 1.0);
        assert_eq!(u.value_at(0.4999)[0], 1.0);
        assert_eq!(u.value_at(0.5)[0], -1.0);
        assert_eq!(u.value_at(1.0)[0], -1.0);
    }

    #[test]
    fn control_outside_set_rejected() {
        let set = ControlSet::interval(-0.05, 1.0);
        assert!(ControlSignal::constant(v(&[2.0]), 1.0, &set).is_err());
        assert!(ControlSignal::new(vec![0.1, 1.0], vec![v(&[0.0])], &set).is_err());
        assert!(ControlSignal::new(vec![0.0, 0.5, 0.5], vec![v(&[0.0]), v(&[0.0])], &set).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let traj = Trajectory::new(
            vec![0.0, 0.1, 0.3],
            vec![v(&[0.0, 1.0 / 3.0]), v(&[0.1, 0.2]), v(&[std::f64::consts::PI, -1e-300])],
            None,
            vec![-1.0, -0.5, 1e-17],
            vec![0.0, 0.0, 2.5],
            vec![v(&[1.0]), v(&[-0.05])],
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,u1,psi,xi\n"));
        let back = Trajectory::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.grid, traj.grid);
        assert_eq!(back.states, traj.states);
        assert_eq!(back.controls, traj.controls);
        assert_eq!(back.xi, traj.xi);
    }
}
