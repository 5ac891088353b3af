use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Names of the state and action columns of a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub states: Vec<String>,
    pub actions: Vec<String>,
}

/// A time series of states and the actions applied at each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Matrix,
    pub actions: Matrix,
    pub dt: f64,
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
}

impl Trajectory {
    pub fn new(states: Matrix, actions: Matrix, dt: f64, schema: ChannelSchema) -> Result<Self> {
        if states.rows() != actions.rows() {
            return Err(Error::shape(format!(
                "{} state rows but {} action rows",
                states.rows(),
                actions.rows()
            )));
        }
        if states.cols() != schema.states.len() || actions.cols() != schema.actions.len() {
            return Err(Error::shape("channel names do not match the data width"));
        }
        if !states.is_finite() || !actions.is_finite() {
            return Err(Error::domain("trajectory contains non-finite values"));
        }
        Ok(Trajectory {
            states,
            actions,
            dt,
            state_names: schema.states,
            action_names: schema.actions,
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn schema(&self) -> ChannelSchema {
        ChannelSchema {
            states: self.state_names.clone(),
            actions: self.action_names.clone(),
        }
    }
}

fn fmt_full(v: f64) -> String {
    // 17 significant digits: enough to reproduce every f64 exactly.
    format!("{v:.16e}")
}

/// Writes `t,<states...>,<actions...>` with one row per step.
pub fn csv_export(traj: &Trajectory, path: &Path) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(err) => Error::io(path, err),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["t".to_string()];
    header.extend(traj.state_names.iter().cloned());
    header.extend(traj.action_names.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for t in 0..traj.len() {
        let mut rec = vec![fmt_full(t as f64 * traj.dt)];
        rec.extend(traj.states.row(t).iter().map(|&v| fmt_full(v)));
        rec.extend(traj.actions.row(t).iter().map(|&v| fmt_full(v)));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trajectory CSV.
///
/// With a schema, the header must be exactly `t`, the schema's states, then
/// its actions. Without one, columns named `u` or starting with `u_` are
/// actions and the rest are states. `dt` is the spacing of the first two
/// time stamps.
pub fn csv_ingest(path: &Path, schema: Option<&ChannelSchema>) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            line: 0,
            msg: format!("cannot open {}: {e}", path.display()),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Parse {
            line: 1,
            msg: "first column must be 't'".into(),
        });
    }
    let columns = &header[1..];
    let schema = match schema {
        Some(s) => {
            let expected: Vec<&String> = s.states.iter().chain(&s.actions).collect();
            for name in &expected {
                if !columns.contains(name) {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("missing column '{name}'"),
                    });
                }
            }
            for name in columns {
                if !expected.contains(&name) {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("unexpected column '{name}'"),
                    });
                }
            }
            if columns.iter().zip(&expected).any(|(a, b)| a != *b) {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("columns must appear in the order t,{}", s.states.iter().chain(&s.actions).cloned().collect::<Vec<_>>().join(",")),
                });
            }
            s.clone()
        }
        None => {
            let is_action = |n: &str| n == "u" || n.starts_with("u_");
            let split = columns.iter().position(|n| is_action(n)).unwrap_or(columns.len());
            if columns[split..].iter().any(|n| !is_action(n)) {
                return Err(Error::Parse {
                    line: 1,
                    msg: "action columns (u, u_*) must follow all state columns".into(),
                });
            }
            ChannelSchema {
                states: columns[..split].to_vec(),
                actions: columns[split..].to_vec(),
            }
        }
    };

    let (ds, du) = (schema.states.len(), schema.actions.len());
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != 1 + ds + du {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", 1 + ds + du, rec.len()),
            });
        }
        let mut values = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column '{}': cannot parse '{field}' as a number", header[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column '{}' is not finite", header[j]),
                });
            }
            values.push(v);
        }
        times.push(values[0]);
        states.extend_from_slice(&values[1..1 + ds]);
        actions.extend_from_slice(&values[1 + ds..]);
    }
    let steps = times.len();
    let dt = if steps >= 2 { times[1] - times[0] } else { 0.0 };
    Trajectory::new(
        Matrix::from_vec(steps, ds, states)?,
        Matrix::from_vec(steps, du, actions)?,
        dt,
        schema,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use crate::simulators::{generate_actuation, simulate, System};

    #[test]
    fn export_ingest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut rng = RngState::new(12);
        let u = generate_actuation(&mut rng, 64, 0.5, 4).unwrap();
        let tr = simulate(&System::Pendulum.default_params(), &u, 0.01, &mut rng).unwrap();
        csv_export(&tr, &path).unwrap();
        let back = csv_ingest(&path, Some(&System::Pendulum.schema())).unwrap();
        assert_eq!(back, tr);
        let inferred = csv_ingest(&path, None).unwrap();
        assert_eq!(inferred, tr);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "t,theta_shaft,u\n0,0.1,0.5\n").unwrap();
        let err = csv_ingest(&path, Some(&System::BacklashMotor.schema())).unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("omega_shaft"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        std::fs::write(&path, "t,x,u\n0,1,2\n0.1,oops,2\n").unwrap();
        match csv_ingest(&path, None).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("'x'"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
