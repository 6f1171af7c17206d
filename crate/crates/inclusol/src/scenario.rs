//! Declarative scenario files: a strict nested key-value format with
//! `[section]` headers, `key = value` lines and `#` comments. Unknown
//! sections, unknown keys and duplicate keys are errors. Coefficient
//! functions are expression strings over `t` and `s` (see [`crate::expr`]).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::columns::format_value;
use crate::control::{ControlProblem, ControlSet};
use crate::error::{Error, Result};
use crate::expr;
use crate::grid::TimeGrid;
use crate::linalg;
use crate::problem::{
    AlphaFar, GrowthEnvelope, Kernel, ProblemSpec, RadiusFn, ScalarFn, VelocityMap,
};
use crate::sets::{MovingSet, SetGeometry, VariationKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub problem: ProblemDecl,
    pub dynamics: DynamicsDecl,
    pub kernel: KernelDecl,
    pub envelope: EnvelopeDecl,
    pub moving_set: Option<MovingSetDecl>,
    pub control: Option<ControlDecl>,
    pub set_probe: Option<SetProbeDecl>,
    pub run: RunDecl,
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDecl {
    pub dimension: usize,
    pub horizon: f64,
    pub steps: usize,
    pub x0: Vec<f64>,
    pub quad_refine: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsDecl {
    Zero,
    Constant {
        vector: Vec<f64>,
    },
    Linear {
        matrix: Vec<f64>,
    },
    Diagonal {
        diag: Vec<f64>,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    BallAffine {
        matrix: Vec<f64>,
        vector: Vec<f64>,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelDecl {
    None,
    /// `g(t,s,x) = coeff(t,s) * B x`.
    ScaledState {
        matrix: Vec<f64>,
        coeff: String,
    },
    /// One-dimensional `g(t,s,x) = a(t,s) x + b(t,s)`.
    Expr {
        a: String,
        b: String,
    },
    /// `g(t,s,x,u) = A u + b0`.
    ControlledLinear {
        matrix: Vec<f64>,
        vector: Vec<f64>,
        control_dim: usize,
    },
    /// One-dimensional `g(t,s,x,u) = u^2`.
    ControlledSquare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeDecl {
    pub c: String,
    pub d: String,
    pub sigma: String,
    pub mu: String,
    pub k: String,
    pub k_tilde: String,
}

impl Default for EnvelopeDecl {
    fn default() -> Self {
        EnvelopeDecl {
            c: "0".into(),
            d: "0".into(),
            sigma: "0".into(),
            mu: "0".into(),
            k: "0".into(),
            k_tilde: "0".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovingSetDecl {
    pub variant: MovingSetVariant,
    pub zeta: String,
    pub zeta_dot: Option<String>,
    pub lipschitz: f64,
    pub alpha0: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MovingSetVariant {
    StaticBall {
        center: Vec<f64>,
        radius: f64,
    },
    StaticBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `C(t) = { x : <normal, x> >= offset + zeta(t) }`.
    MovingHalfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    /// `C(t, x) = { y : <normal, y> >= gain ||x|| + offset + zeta(t) }`.
    StateWall {
        normal: Vec<f64>,
        gain: f64,
        offset: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecl {
    pub control_dim: usize,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub effort_weight: f64,
    pub terminal_target: Option<Vec<f64>>,
    pub terminal_weight: f64,
    pub starts: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetProbeDecl {
    pub set: SetDeclVariant,
    pub rho: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetDeclVariant {
    /// One-dimensional union of closed intervals, flat `[a1,b1,a2,b2,...]`.
    IntervalUnion {
        intervals: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    ComplementBall {
        center: Vec<f64>,
        radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Sweep,
    Bounds,
    Control,
    Study,
    Probe,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Bounds => "bounds",
            Command::Control => "control",
            Command::Study => "study",
            Command::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    WeakContinuity,
    Lipschitz,
    AlphaFar,
}

impl ProbeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeKind::WeakContinuity => "weak_continuity",
            ProbeKind::Lipschitz => "lipschitz",
            ProbeKind::AlphaFar => "alpha_far",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunDecl {
    pub command: Command,
    pub dims: Option<Vec<usize>>,
    pub ns: Option<Vec<usize>>,
    pub oracle_steps: Option<usize>,
    pub oracle_tol: f64,
    pub order_min: Option<f64>,
    pub order_max: Option<f64>,
    pub reduced: bool,
    pub probe: Option<ProbeKind>,
    pub modes: Option<Vec<usize>>,
    pub probes: usize,
    pub seed: u64,
    /// Expected outcome of the probe's nonlinearity / compliance flag.
    pub expect_flagged: Option<bool>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct RawSection {
    entries: Vec<(String, String, usize)>,
}

struct SectionReader<'a> {
    name: &'a str,
    entries: &'a [(String, String, usize)],
    consumed: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    fn new(name: &'a str, section: Option<&'a RawSection>) -> SectionReader<'a> {
        let entries: &[(String, String, usize)] =
            section.map(|s| s.entries.as_slice()).unwrap_or(&[]);
        SectionReader {
            name,
            entries,
            consumed: vec![false; entries.len()],
        }
    }

    fn lookup(&mut self, key: &str) -> Option<(&'a str, usize)> {
        for (i, (k, v, line)) in self.entries.iter().enumerate() {
            if k == key {
                self.consumed[i] = true;
                return Some((v.as_str(), *line));
            }
        }
        None
    }

    fn require(&mut self, key: &str) -> Result<(&'a str, usize)> {
        self.lookup(key).ok_or_else(|| Error::Validation {
            line: self.entries.first().map(|e| e.2).unwrap_or(0),
            msg: format!("missing key '{key}' in [{}]", self.name),
        })
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.lookup(key) {
            None => Ok(None),
            Some((v, line)) => Ok(Some(parse_f64(v, line)?)),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_req(&mut self, key: &str) -> Result<f64> {
        let (v, line) = self.require(key)?;
        parse_f64(v, line)
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.lookup(key) {
            None => Ok(default),
            Some((v, line)) => parse_usize(v, line),
        }
    }

    fn usize_req(&mut self, key: &str) -> Result<usize> {
        let (v, line) = self.require(key)?;
        parse_usize(v, line)
    }

    fn vec_f64_opt(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.lookup(key) {
            None => Ok(None),
            Some((v, line)) => Ok(Some(parse_vec_f64(v, line)?)),
        }
    }

    fn vec_f64_req(&mut self, key: &str) -> Result<Vec<f64>> {
        let (v, line) = self.require(key)?;
        parse_vec_f64(v, line)
    }

    fn vec_usize_opt(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.lookup(key) {
            None => Ok(None),
            Some((v, line)) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    out.push(parse_usize(part.trim(), line)?);
                }
                Ok(Some(out))
            }
        }
    }

    fn string_opt(&mut self, key: &str) -> Option<(String, usize)> {
        self.lookup(key).map(|(v, line)| (v.to_string(), line))
    }

    fn string_or(&mut self, key: &str, default: &str) -> (String, usize) {
        self.string_opt(key)
            .unwrap_or_else(|| (default.to_string(), 0))
    }

    fn finish(self) -> Result<()> {
        for (i, c) in self.consumed.iter().enumerate() {
            if !c {
                let (k, _, line) = &self.entries[i];
                return Err(Error::Validation {
                    line: *line,
                    msg: format!("unknown key '{k}' in [{}]", self.name),
                });
            }
        }
        Ok(())
    }
}

fn parse_f64(v: &str, line: usize) -> Result<f64> {
    match v {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => v.parse::<f64>().map_err(|_| Error::Parse {
            line,
            col: 1,
            msg: format!("malformed number '{v}'"),
        }),
    }
}

fn parse_usize(v: &str, line: usize) -> Result<usize> {
    v.parse::<usize>().map_err(|_| Error::Parse {
        line,
        col: 1,
        msg: format!("malformed count '{v}'"),
    })
}

fn parse_vec_f64(v: &str, line: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in v.split(',') {
        out.push(parse_f64(part.trim(), line)?);
    }
    Ok(out)
}

const SECTIONS: &[&str] = &[
    "root",
    "problem",
    "dynamics",
    "kernel",
    "envelope",
    "moving_set",
    "control",
    "set",
    "run",
    "output",
];

/// Parses scenario text; errors carry line and column positions.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut sections: BTreeMap<String, RawSection> = BTreeMap::new();
    let mut current = "root".to_string();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(Error::Parse {
                line: line_no,
                col: raw.len(),
                msg: "section header missing ']'".into(),
            })?;
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::Validation {
                    line: line_no,
                    msg: format!("unknown section [{name}]"),
                });
            }
            current = name.to_string();
            continue;
        }
        let eq = line.find('=').ok_or(Error::Parse {
            line: line_no,
            col: raw.trim_end().len().max(1),
            msg: "expected 'key = value'".into(),
        })?;
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                col: eq + 1,
                msg: "empty key or value".into(),
            });
        }
        let section = sections
            .entry(current.clone())
            .or_insert_with(|| RawSection {
                entries: Vec::new(),
            });
        if section.entries.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::Validation {
                line: line_no,
                msg: format!("duplicate key '{key}' in [{current}]"),
            });
        }
        section.entries.push((key, value, line_no));
    }

    let mut root = SectionReader::new("root", sections.get("root"));
    let name = root
        .string_opt("name")
        .map(|(v, _)| v)
        .ok_or(Error::Validation {
            line: 1,
            msg: "missing 'name'".into(),
        })?;
    root.finish()?;

    let mut prob = SectionReader::new("problem", sections.get("problem"));
    let dimension = prob.usize_req("dimension")?;
    if dimension == 0 {
        return Err(Error::Validation {
            line: 0,
            msg: "dimension must be positive".into(),
        });
    }
    let horizon = prob.f64_req("horizon")?;
    let steps = prob.usize_req("steps")?;
    let x0 = match (prob.vec_f64_opt("x0")?, prob.f64_opt("x0_fill")?) {
        (Some(v), None) => v,
        (None, Some(f)) => vec![f; dimension],
        (Some(_), Some(_)) => {
            return Err(Error::Validation {
                line: 0,
                msg: "give either x0 or x0_fill".into(),
            })
        }
        (None, None) => vec![0.0; dimension],
    };
    if x0.len() != dimension {
        return Err(Error::Validation {
            line: 0,
            msg: format!("x0 has {} entries, dimension is {dimension}", x0.len()),
        });
    }
    let quad_refine = prob.usize_or("quad_refine", 4)?;
    prob.finish()?;
    let problem = ProblemDecl {
        dimension,
        horizon,
        steps,
        x0,
        quad_refine,
    };

    let mut dynr = SectionReader::new("dynamics", sections.get("dynamics"));
    let (dyn_variant, _) = dynr.string_or("variant", "zero");
    let dynamics = match dyn_variant.as_str() {
        "zero" => DynamicsDecl::Zero,
        "constant" => DynamicsDecl::Constant {
            vector: dynr.vec_f64_req("vector")?,
        },
        "linear" => DynamicsDecl::Linear {
            matrix: dynr.vec_f64_req("matrix")?,
        },
        "diagonal" => DynamicsDecl::Diagonal {
            diag: dynr.vec_f64_req("diag")?,
        },
        "box" => DynamicsDecl::Box {
            lo: dynr.vec_f64_req("lo")?,
            hi: dynr.vec_f64_req("hi")?,
        },
        "ball_affine" => DynamicsDecl::BallAffine {
            matrix: dynr.vec_f64_req("matrix")?,
            vector: dynr
                .vec_f64_opt("vector")?
                .unwrap_or_else(|| vec![0.0; dimension]),
            radius: dynr.f64_req("radius")?,
        },
        other => {
            return Err(Error::Validation {
                line: 0,
                msg: format!("unknown dynamics variant '{other}'"),
            })
        }
    };
    dynr.finish()?;

    let mut kr = SectionReader::new("kernel", sections.get("kernel"));
    let (k_variant, _) = kr.string_or("variant", "none");
    let kernel = match k_variant.as_str() {
        "none" => KernelDecl::None,
        "scaled_state" => KernelDecl::ScaledState {
            matrix: kr
                .vec_f64_opt("matrix")?
                .unwrap_or_else(|| identity_matrix(dimension)),
            coeff: kr.string_or("coeff", "1").0,
        },
        "expr" => KernelDecl::Expr {
            a: kr.string_or("a", "0").0,
            b: kr.string_or("b", "0").0,
        },
        "controlled_linear" => {
            let control_dim = kr.usize_or("m", 1)?;
            KernelDecl::ControlledLinear {
                matrix: kr
                    .vec_f64_opt("matrix")?
                    .unwrap_or_else(|| vec![1.0; dimension * control_dim]),
                vector: kr
                    .vec_f64_opt("vector")?
                    .unwrap_or_else(|| vec![0.0; dimension]),
                control_dim,
            }
        }
        "controlled_square" => KernelDecl::ControlledSquare,
        other => {
            return Err(Error::Validation {
                line: 0,
                msg: format!("unknown kernel variant '{other}'"),
            })
        }
    };
    kr.finish()?;

    let mut er = SectionReader::new("envelope", sections.get("envelope"));
    let envelope = EnvelopeDecl {
        c: er.string_or("c", "0").0,
        d: er.string_or("d", "0").0,
        sigma: er.string_or("sigma", "0").0,
        mu: er.string_or("mu", "0").0,
        k: er.string_or("k", "0").0,
        k_tilde: er.string_or("k_tilde", "0").0,
    };
    er.finish()?;

    let moving_set = if let Some(raw) = sections.get("moving_set") {
        let mut mr = SectionReader::new("moving_set", Some(raw));
        let (variant, vline) = mr.string_or("variant", "");
        let variant = match variant.as_str() {
            "static_ball" => MovingSetVariant::StaticBall {
                center: mr.vec_f64_req("center")?,
                radius: mr.f64_req("radius")?,
            },
            "static_box" => MovingSetVariant::StaticBox {
                lo: mr.vec_f64_req("lo")?,
                hi: mr.vec_f64_req("hi")?,
            },
            "moving_halfspace" => MovingSetVariant::MovingHalfspace {
                normal: mr.vec_f64_req("normal")?,
                offset: mr.f64_or("offset", 0.0)?,
            },
            "state_wall" => MovingSetVariant::StateWall {
                normal: mr.vec_f64_req("normal")?,
                gain: mr.f64_req("gain")?,
                offset: mr.f64_or("offset", 0.0)?,
            },
            other => {
                return Err(Error::Validation {
                    line: vline,
                    msg: format!("unknown moving_set variant '{other}'"),
                })
            }
        };
        let lip_line = mr.lookup("L");
        let (lipschitz, lip_line) = match lip_line {
            Some((v, line)) => (parse_f64(v, line)?, line),
            None => (0.0, 0),
        };
        if !(0.0..1.0).contains(&lipschitz) {
            return Err(Error::Validation {
                line: lip_line,
                msg: "L must lie in [0,1)".into(),
            });
        }
        let decl = MovingSetDecl {
            variant,
            zeta: mr.string_or("zeta", "0").0,
            zeta_dot: mr.string_opt("zeta_dot").map(|(v, _)| v),
            lipschitz,
            alpha0: mr.f64_or("alpha0", 1.0)?,
            rho: mr.f64_or("rho", f64::INFINITY)?,
        };
        mr.finish()?;
        Some(decl)
    } else {
        None
    };

    let control = if let Some(raw) = sections.get("control") {
        let mut cr = SectionReader::new("control", Some(raw));
        let control_dim = cr.usize_or("m", 1)?;
        let decl = ControlDecl {
            control_dim,
            u_lo: cr.vec_f64_req("u_lo")?,
            u_hi: cr.vec_f64_req("u_hi")?,
            effort_weight: cr.f64_or("w_effort", 1.0)?,
            terminal_target: cr.vec_f64_opt("target")?,
            terminal_weight: cr.f64_or("w_terminal", 0.0)?,
            starts: cr.usize_or("starts", 1)?,
            iterations: cr.usize_or("iterations", 50)?,
        };
        cr.finish()?;
        if decl.u_lo.len() != control_dim || decl.u_hi.len() != control_dim {
            return Err(Error::Validation {
                line: 0,
                msg: "control bounds must match the control dimension".into(),
            });
        }
        Some(decl)
    } else {
        None
    };

    let set_probe = if let Some(raw) = sections.get("set") {
        let mut sr = SectionReader::new("set", Some(raw));
        let (variant, vline) = sr.string_or("variant", "");
        let set = match variant.as_str() {
            "interval_union" => SetDeclVariant::IntervalUnion {
                intervals: sr.vec_f64_req("intervals")?,
            },
            "ball" => SetDeclVariant::Ball {
                center: sr.vec_f64_req("center")?,
                radius: sr.f64_req("radius")?,
            },
            "box" => SetDeclVariant::Box {
                lo: sr.vec_f64_req("lo")?,
                hi: sr.vec_f64_req("hi")?,
            },
            "complement_ball" => SetDeclVariant::ComplementBall {
                center: sr.vec_f64_req("center")?,
                radius: sr.f64_req("radius")?,
            },
            other => {
                return Err(Error::Validation {
                    line: vline,
                    msg: format!("unknown set variant '{other}'"),
                })
            }
        };
        let decl = SetProbeDecl {
            set,
            rho: sr.f64_or("rho", 1.0)?,
            samples: sr.usize_or("samples", 200)?,
        };
        sr.finish()?;
        Some(decl)
    } else {
        None
    };

    let mut rr = SectionReader::new("run", sections.get("run"));
    let (cmd, cmd_line) = rr.string_or("command", "solve");
    let command = match cmd.as_str() {
        "solve" => Command::Solve,
        "sweep" => Command::Sweep,
        "bounds" => Command::Bounds,
        "control" => Command::Control,
        "study" => Command::Study,
        "probe" => Command::Probe,
        other => {
            return Err(Error::Validation {
                line: cmd_line,
                msg: format!("unknown command '{other}'"),
            })
        }
    };
    let probe = match rr.string_opt("probe") {
        None => None,
        Some((v, line)) => Some(match v.as_str() {
            "weak_continuity" => ProbeKind::WeakContinuity,
            "lipschitz" => ProbeKind::Lipschitz,
            "alpha_far" => ProbeKind::AlphaFar,
            other => {
                return Err(Error::Validation {
                    line,
                    msg: format!("unknown probe '{other}'"),
                })
            }
        }),
    };
    let run = RunDecl {
        command,
        dims: rr.vec_usize_opt("dims")?,
        ns: rr.vec_usize_opt("ns")?,
        oracle_steps: match rr.string_opt("oracle") {
            None => None,
            Some((v, line)) => {
                if v != "augmented_rk4" {
                    return Err(Error::Validation {
                        line,
                        msg: format!("unknown oracle '{v}'"),
                    });
                }
                Some(rr.usize_or("oracle_steps", 100_000)?)
            }
        },
        oracle_tol: rr.f64_or("oracle_tol", 5e-3)?,
        order_min: rr.f64_opt("order_min")?,
        order_max: rr.f64_opt("order_max")?,
        reduced: matches!(rr.string_opt("reduced"), Some((v, _)) if v == "true"),
        probe,
        modes: rr.vec_usize_opt("modes")?,
        probes: rr.usize_or("probes", 64)?,
        seed: rr.usize_or("seed", 0)? as u64,
        expect_flagged: match rr.string_opt("expect_flagged") {
            None => None,
            Some((v, line)) => match v.as_str() {
                "true" => Some(true),
                "false" => Some(false),
                other => {
                    return Err(Error::Validation {
                        line,
                        msg: format!("expect_flagged must be true or false, got '{other}'"),
                    })
                }
            },
        },
        alpha_min: rr.f64_opt("alpha_min")?,
        alpha_max: rr.f64_opt("alpha_max")?,
    };
    rr.finish()?;

    let output = if let Some(raw) = sections.get("output") {
        let mut or = SectionReader::new("output", Some(raw));
        let dir = or.string_opt("dir").map(|(v, _)| v);
        or.finish()?;
        dir
    } else {
        None
    };

    let scenario = Scenario {
        name,
        problem,
        dynamics,
        kernel,
        envelope,
        moving_set,
        control,
        set_probe,
        run,
        output,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

impl Scenario {
    /// Eager cross-field validation beyond per-key parsing.
    pub fn validate(&self) -> Result<()> {
        let d = self.problem.dimension;
        if !(self.problem.horizon > 0.0) {
            return Err(Error::Validation {
                line: 0,
                msg: "horizon must be positive".into(),
            });
        }
        if self.problem.steps == 0 {
            return Err(Error::Validation {
                line: 0,
                msg: "steps must be positive".into(),
            });
        }
        match &self.dynamics {
            DynamicsDecl::Zero => {}
            DynamicsDecl::Constant { vector } => expect_len(vector, d, "dynamics vector")?,
            DynamicsDecl::Linear { matrix } => expect_len(matrix, d * d, "dynamics matrix")?,
            DynamicsDecl::Diagonal { diag } => expect_len(diag, d, "dynamics diag")?,
            DynamicsDecl::Box { lo, hi } => {
                expect_len(lo, d, "dynamics lo")?;
                expect_len(hi, d, "dynamics hi")?;
            }
            DynamicsDecl::BallAffine {
                matrix,
                vector,
                radius,
            } => {
                expect_len(matrix, d * d, "dynamics matrix")?;
                expect_len(vector, d, "dynamics vector")?;
                if !(*radius > 0.0) {
                    return Err(Error::Validation {
                        line: 0,
                        msg: "dynamics radius must be positive".into(),
                    });
                }
            }
        }
        match &self.kernel {
            KernelDecl::None | KernelDecl::ControlledSquare => {}
            KernelDecl::ScaledState { matrix, coeff } => {
                expect_len(matrix, d * d, "kernel matrix")?;
                expr::compile_bivariate(coeff, 0)?;
            }
            KernelDecl::Expr { a, b } => {
                if d != 1 {
                    return Err(Error::Validation {
                        line: 0,
                        msg: "expr kernel needs dimension 1".into(),
                    });
                }
                expr::compile_bivariate(a, 0)?;
                expr::compile_bivariate(b, 0)?;
            }
            KernelDecl::ControlledLinear {
                matrix,
                vector,
                control_dim,
            } => {
                expect_len(matrix, d * control_dim, "kernel matrix")?;
                expect_len(vector, d, "kernel vector")?;
            }
        }
        if matches!(self.kernel, KernelDecl::ControlledSquare) && d != 1 {
            return Err(Error::Validation {
                line: 0,
                msg: "controlled_square kernel needs dimension 1".into(),
            });
        }
        expr::compile_scalar(&self.envelope.c, 0)?;
        expr::compile_scalar(&self.envelope.d, 0)?;
        expr::compile_bivariate(&self.envelope.sigma, 0)?;
        expr::compile_scalar(&self.envelope.mu, 0)?;
        expr::compile_scalar(&self.envelope.k, 0)?;
        expr::compile_scalar(&self.envelope.k_tilde, 0)?;
        if let Some(ms) = &self.moving_set {
            if !(ms.alpha0 > 0.0 && ms.alpha0 <= 1.0) {
                return Err(Error::Validation {
                    line: 0,
                    msg: "alpha0 must lie in (0, 1]".into(),
                });
            }
            if ms.alpha0 * ms.alpha0 <= ms.lipschitz {
                return Err(Error::Validation {
                    line: 0,
                    msg: "alpha0^2 must exceed L".into(),
                });
            }
            if !(ms.rho > 0.0) {
                return Err(Error::Validation {
                    line: 0,
                    msg: "rho must be positive".into(),
                });
            }
            expr::compile_scalar(&ms.zeta, 0)?;
            if let Some(zd) = &ms.zeta_dot {
                expr::compile_scalar(zd, 0)?;
            }
            match &ms.variant {
                MovingSetVariant::StaticBall { center, .. } => expect_len(center, d, "center")?,
                MovingSetVariant::StaticBox { lo, hi } => {
                    expect_len(lo, d, "lo")?;
                    expect_len(hi, d, "hi")?;
                }
                MovingSetVariant::MovingHalfspace { normal, .. }
                | MovingSetVariant::StateWall { normal, .. } => expect_len(normal, d, "normal")?,
            }
        }
        match self.run.command {
            Command::Sweep if self.moving_set.is_none() => {
                return Err(Error::Validation {
                    line: 0,
                    msg: "command sweep needs a [moving_set] section".into(),
                })
            }
            Command::Control if self.control.is_none() => {
                return Err(Error::Validation {
                    line: 0,
                    msg: "command control needs a [control] section".into(),
                })
            }
            Command::Study if self.run.ns.is_none() => {
                return Err(Error::Validation {
                    line: 0,
                    msg: "command study needs ns".into(),
                })
            }
            Command::Probe if self.run.probe.is_none() => {
                return Err(Error::Validation {
                    line: 0,
                    msg: "command probe needs a probe kind".into(),
                })
            }
            _ => {}
        }
        if self.run.probe == Some(ProbeKind::AlphaFar) && self.set_probe.is_none() {
            return Err(Error::Validation {
                line: 0,
                msg: "alpha_far probe needs a [set] section".into(),
            });
        }
        if self.run.probe == Some(ProbeKind::Lipschitz) && self.moving_set.is_none() {
            return Err(Error::Validation {
                line: 0,
                msg: "lipschitz probe needs a [moving_set] section".into(),
            });
        }
        Ok(())
    }

    /// Canonical serialization; `parse_scenario(serialize(s)) == s`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut out, "name", self.name.clone());
        out.push_str("\n[problem]\n");
        kv(&mut out, "dimension", self.problem.dimension.to_string());
        kv(&mut out, "horizon", format_value(self.problem.horizon));
        kv(&mut out, "steps", self.problem.steps.to_string());
        kv(&mut out, "x0", fmt_vec(&self.problem.x0));
        kv(
            &mut out,
            "quad_refine",
            self.problem.quad_refine.to_string(),
        );

        out.push_str("\n[dynamics]\n");
        match &self.dynamics {
            DynamicsDecl::Zero => kv(&mut out, "variant", "zero".into()),
            DynamicsDecl::Constant { vector } => {
                kv(&mut out, "variant", "constant".into());
                kv(&mut out, "vector", fmt_vec(vector));
            }
            DynamicsDecl::Linear { matrix } => {
                kv(&mut out, "variant", "linear".into());
                kv(&mut out, "matrix", fmt_vec(matrix));
            }
            DynamicsDecl::Diagonal { diag } => {
                kv(&mut out, "variant", "diagonal".into());
                kv(&mut out, "diag", fmt_vec(diag));
            }
            DynamicsDecl::Box { lo, hi } => {
                kv(&mut out, "variant", "box".into());
                kv(&mut out, "lo", fmt_vec(lo));
                kv(&mut out, "hi", fmt_vec(hi));
            }
            DynamicsDecl::BallAffine {
                matrix,
                vector,
                radius,
            } => {
                kv(&mut out, "variant", "ball_affine".into());
                kv(&mut out, "matrix", fmt_vec(matrix));
                kv(&mut out, "vector", fmt_vec(vector));
                kv(&mut out, "radius", format_value(*radius));
            }
        }

        out.push_str("\n[kernel]\n");
        match &self.kernel {
            KernelDecl::None => kv(&mut out, "variant", "none".into()),
            KernelDecl::ScaledState { matrix, coeff } => {
                kv(&mut out, "variant", "scaled_state".into());
                kv(&mut out, "matrix", fmt_vec(matrix));
                kv(&mut out, "coeff", coeff.clone());
            }
            KernelDecl::Expr { a, b } => {
                kv(&mut out, "variant", "expr".into());
                kv(&mut out, "a", a.clone());
                kv(&mut out, "b", b.clone());
            }
            KernelDecl::ControlledLinear {
                matrix,
                vector,
                control_dim,
            } => {
                kv(&mut out, "variant", "controlled_linear".into());
                kv(&mut out, "m", control_dim.to_string());
                kv(&mut out, "matrix", fmt_vec(matrix));
                kv(&mut out, "vector", fmt_vec(vector));
            }
            KernelDecl::ControlledSquare => kv(&mut out, "variant", "controlled_square".into()),
        }

        out.push_str("\n[envelope]\n");
        kv(&mut out, "c", self.envelope.c.clone());
        kv(&mut out, "d", self.envelope.d.clone());
        kv(&mut out, "sigma", self.envelope.sigma.clone());
        kv(&mut out, "mu", self.envelope.mu.clone());
        kv(&mut out, "k", self.envelope.k.clone());
        kv(&mut out, "k_tilde", self.envelope.k_tilde.clone());

        if let Some(ms) = &self.moving_set {
            out.push_str("\n[moving_set]\n");
            match &ms.variant {
                MovingSetVariant::StaticBall { center, radius } => {
                    kv(&mut out, "variant", "static_ball".into());
                    kv(&mut out, "center", fmt_vec(center));
                    kv(&mut out, "radius", format_value(*radius));
                }
                MovingSetVariant::StaticBox { lo, hi } => {
                    kv(&mut out, "variant", "static_box".into());
                    kv(&mut out, "lo", fmt_vec(lo));
                    kv(&mut out, "hi", fmt_vec(hi));
                }
                MovingSetVariant::MovingHalfspace { normal, offset } => {
                    kv(&mut out, "variant", "moving_halfspace".into());
                    kv(&mut out, "normal", fmt_vec(normal));
                    kv(&mut out, "offset", format_value(*offset));
                }
                MovingSetVariant::StateWall {
                    normal,
                    gain,
                    offset,
                } => {
                    kv(&mut out, "variant", "state_wall".into());
                    kv(&mut out, "normal", fmt_vec(normal));
                    kv(&mut out, "gain", format_value(*gain));
                    kv(&mut out, "offset", format_value(*offset));
                }
            }
            kv(&mut out, "zeta", ms.zeta.clone());
            if let Some(zd) = &ms.zeta_dot {
                kv(&mut out, "zeta_dot", zd.clone());
            }
            kv(&mut out, "L", format_value(ms.lipschitz));
            kv(&mut out, "alpha0", format_value(ms.alpha0));
            kv(&mut out, "rho", format_value(ms.rho));
        }

        if let Some(c) = &self.control {
            out.push_str("\n[control]\n");
            kv(&mut out, "m", c.control_dim.to_string());
            kv(&mut out, "u_lo", fmt_vec(&c.u_lo));
            kv(&mut out, "u_hi", fmt_vec(&c.u_hi));
            kv(&mut out, "w_effort", format_value(c.effort_weight));
            if let Some(t) = &c.terminal_target {
                kv(&mut out, "target", fmt_vec(t));
            }
            kv(&mut out, "w_terminal", format_value(c.terminal_weight));
            kv(&mut out, "starts", c.starts.to_string());
            kv(&mut out, "iterations", c.iterations.to_string());
        }

        if let Some(sp) = &self.set_probe {
            out.push_str("\n[set]\n");
            match &sp.set {
                SetDeclVariant::IntervalUnion { intervals } => {
                    kv(&mut out, "variant", "interval_union".into());
                    kv(&mut out, "intervals", fmt_vec(intervals));
                }
                SetDeclVariant::Ball { center, radius } => {
                    kv(&mut out, "variant", "ball".into());
                    kv(&mut out, "center", fmt_vec(center));
                    kv(&mut out, "radius", format_value(*radius));
                }
                SetDeclVariant::Box { lo, hi } => {
                    kv(&mut out, "variant", "box".into());
                    kv(&mut out, "lo", fmt_vec(lo));
                    kv(&mut out, "hi", fmt_vec(hi));
                }
                SetDeclVariant::ComplementBall { center, radius } => {
                    kv(&mut out, "variant", "complement_ball".into());
                    kv(&mut out, "center", fmt_vec(center));
                    kv(&mut out, "radius", format_value(*radius));
                }
            }
            kv(&mut out, "rho", format_value(sp.rho));
            kv(&mut out, "samples", sp.samples.to_string());
        }

        out.push_str("\n[run]\n");
        kv(&mut out, "command", self.run.command.as_str().into());
        if let Some(d) = &self.run.dims {
            kv(&mut out, "dims", fmt_usize_vec(d));
        }
        if let Some(n) = &self.run.ns {
            kv(&mut out, "ns", fmt_usize_vec(n));
        }
        if let Some(steps) = self.run.oracle_steps {
            kv(&mut out, "oracle", "augmented_rk4".into());
            kv(&mut out, "oracle_steps", steps.to_string());
        }
        kv(&mut out, "oracle_tol", format_value(self.run.oracle_tol));
        if let Some(v) = self.run.order_min {
            kv(&mut out, "order_min", format_value(v));
        }
        if let Some(v) = self.run.order_max {
            kv(&mut out, "order_max", format_value(v));
        }
        if self.run.reduced {
            kv(&mut out, "reduced", "true".into());
        }
        if let Some(p) = self.run.probe {
            kv(&mut out, "probe", p.as_str().into());
        }
        if let Some(m) = &self.run.modes {
            kv(&mut out, "modes", fmt_usize_vec(m));
        }
        kv(&mut out, "probes", self.run.probes.to_string());
        kv(&mut out, "seed", self.run.seed.to_string());
        if let Some(e) = self.run.expect_flagged {
            kv(&mut out, "expect_flagged", e.to_string());
        }
        if let Some(v) = self.run.alpha_min {
            kv(&mut out, "alpha_min", format_value(v));
        }
        if let Some(v) = self.run.alpha_max {
            kv(&mut out, "alpha_max", format_value(v));
        }

        if let Some(dir) = &self.output {
            out.push_str("\n[output]\n");
            kv(&mut out, "dir", dir.clone());
        }
        out
    }

    /// Assembles the executable problem data; `steps` overrides the declared
    /// step count when given.
    pub fn build(&self, steps: Option<usize>) -> Result<BuiltScenario> {
        let d = self.problem.dimension;
        let steps = steps.unwrap_or(self.problem.steps);
        let grid = TimeGrid::uniform(self.problem.horizon, steps)?;

        let velocity_map = match &self.dynamics {
            DynamicsDecl::Zero => VelocityMap::zero(d),
            DynamicsDecl::Constant { vector } => {
                let v = vector.clone();
                VelocityMap::Singleton(Arc::new(move |_, _, out| out.copy_from_slice(&v)))
            }
            DynamicsDecl::Linear { matrix } => {
                let a = matrix.clone();
                VelocityMap::Singleton(Arc::new(move |_, x: &[f64], out: &mut [f64]| {
                    mat_vec(&a, x, out)
                }))
            }
            DynamicsDecl::Diagonal { diag } => {
                let a = diag.clone();
                VelocityMap::Singleton(Arc::new(move |_, x: &[f64], out: &mut [f64]| {
                    for i in 0..x.len() {
                        out[i] = a[i] * x[i];
                    }
                }))
            }
            DynamicsDecl::Box { lo, hi } => VelocityMap::VelocityBox {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            DynamicsDecl::BallAffine {
                matrix,
                vector,
                radius,
            } => {
                let a = matrix.clone();
                let b = vector.clone();
                VelocityMap::OffsetSet {
                    center: Arc::new(move |_, x: &[f64], out: &mut [f64]| {
                        mat_vec(&a, x, out);
                        for (o, bi) in out.iter_mut().zip(&b) {
                            *o += bi;
                        }
                    }),
                    set: SetGeometry::Ball {
                        center: vec![0.0; d],
                        radius: *radius,
                    },
                }
            }
        };

        let kernel = match &self.kernel {
            KernelDecl::None => Kernel::Zero,
            KernelDecl::ScaledState { matrix, coeff } => {
                let a = matrix.clone();
                let c = expr::compile_bivariate(coeff, 0)?;
                Kernel::Plain(Arc::new(move |t, s, x: &[f64], out: &mut [f64]| {
                    mat_vec(&a, x, out);
                    let w = c.eval(t, s);
                    for o in out.iter_mut() {
                        *o *= w;
                    }
                }))
            }
            KernelDecl::Expr { a, b } => {
                let fa = expr::compile_bivariate(a, 0)?;
                let fb = expr::compile_bivariate(b, 0)?;
                Kernel::Plain(Arc::new(move |t, s, x: &[f64], out: &mut [f64]| {
                    out[0] = fa.eval(t, s) * x[0] + fb.eval(t, s);
                }))
            }
            KernelDecl::ControlledLinear {
                matrix,
                vector,
                control_dim,
            } => {
                let a = matrix.clone();
                let b = vector.clone();
                let m = *control_dim;
                Kernel::Controlled(Arc::new(
                    move |_t, _s, _x: &[f64], u: &[f64], out: &mut [f64]| {
                        for (i, o) in out.iter_mut().enumerate() {
                            let mut acc = b[i];
                            for j in 0..m {
                                acc += a[i * m + j] * u[j];
                            }
                            *o = acc;
                        }
                    },
                ))
            }
            KernelDecl::ControlledSquare => Kernel::Controlled(Arc::new(
                |_t, _s, _x: &[f64], u: &[f64], out: &mut [f64]| out[0] = u[0] * u[0],
            )),
        };

        let mu = expr::compile_scalar(&self.envelope.mu, 0)?;
        let envelope = GrowthEnvelope {
            linear_gain: expr::compile_scalar(&self.envelope.c, 0)?,
            offset: expr::compile_scalar(&self.envelope.d, 0)?,
            kernel_growth: expr::compile_bivariate(&self.envelope.sigma, 0)?,
            kernel_lipschitz: if mu.is_zero() {
                RadiusFn::zero()
            } else {
                RadiusFn::new(move |_r, t| mu.eval(t))
            },
            compactness_rate: expr::compile_scalar(&self.envelope.k, 0)?,
            one_sided_rate: expr::compile_scalar(&self.envelope.k_tilde, 0)?,
        };

        let moving_set = match &self.moving_set {
            None => None,
            Some(ms) => {
                let zeta = expr::compile_scalar(&ms.zeta, 0)?;
                let zeta_dot = match &ms.zeta_dot {
                    Some(zd) => Some(expr::compile_scalar(zd, 0)?),
                    None => None,
                };
                let family: crate::sets::SetFamily = match &ms.variant {
                    MovingSetVariant::StaticBall { center, radius } => {
                        let c = center.clone();
                        let r = *radius;
                        Arc::new(move |_, _: &[f64]| SetGeometry::Ball {
                            center: c.clone(),
                            radius: r,
                        })
                    }
                    MovingSetVariant::StaticBox { lo, hi } => {
                        let lo = lo.clone();
                        let hi = hi.clone();
                        Arc::new(move |_, _: &[f64]| SetGeometry::Box {
                            lo: lo.clone(),
                            hi: hi.clone(),
                        })
                    }
                    MovingSetVariant::MovingHalfspace { normal, offset } => {
                        let n: Vec<f64> = normal.iter().map(|v| -v).collect();
                        let off = *offset;
                        let z = zeta.clone();
                        Arc::new(move |t, _: &[f64]| SetGeometry::Halfspace {
                            normal: n.clone(),
                            offset: -(off + z.eval(t)),
                        })
                    }
                    MovingSetVariant::StateWall {
                        normal,
                        gain,
                        offset,
                    } => {
                        let n: Vec<f64> = normal.iter().map(|v| -v).collect();
                        let g = *gain;
                        let off = *offset;
                        let z = zeta.clone();
                        Arc::new(move |t, x: &[f64]| SetGeometry::Halfspace {
                            normal: n.clone(),
                            offset: -(off + g * linalg::norm(x) + z.eval(t)),
                        })
                    }
                };
                let kind = match &ms.variant {
                    MovingSetVariant::StateWall { .. } => VariationKind::StateDependent,
                    _ => VariationKind::TimeOnly,
                };
                Some(MovingSet::new(family, zeta, zeta_dot, ms.lipschitz, kind)?)
            }
        };

        let mut spec = ProblemSpec::new(grid, self.problem.x0.clone(), velocity_map, kernel);
        spec.envelope = envelope;
        spec.moving_set = moving_set;
        spec.quad_refine = self.problem.quad_refine;
        if let Some(ms) = &self.moving_set {
            spec.alpha_far = AlphaFar {
                alpha: ms.alpha0,
                tube: ms.rho,
            };
        }
        spec.validate()?;

        let control = match &self.control {
            None => None,
            Some(c) => {
                let effort = c.effort_weight;
                let terminal_target = c.terminal_target.clone();
                let terminal_weight = c.terminal_weight;
                let problem = ControlProblem {
                    spec: spec.clone(),
                    running_cost: Arc::new(move |_s, _x, _v, u: &[f64]| {
                        effort * linalg::norm_sq(u)
                    }),
                    terminal_cost: Arc::new(
                        move |_x0: &[f64], xt: &[f64]| match &terminal_target {
                            Some(target) => {
                                terminal_weight
                                    * xt.iter()
                                        .zip(target)
                                        .map(|(a, b)| (a - b) * (a - b))
                                        .sum::<f64>()
                            }
                            None => 0.0,
                        },
                    ),
                    control_set: ControlSet::Box {
                        lo: c.u_lo.clone(),
                        hi: c.u_hi.clone(),
                    },
                    terminal_box: None,
                    eta_floor: ScalarFn::zero(),
                };
                problem.validate()?;
                Some(problem)
            }
        };

        Ok(BuiltScenario { spec, control })
    }

    /// The probe set, when one is declared.
    pub fn probe_set(&self) -> Result<Option<SetGeometry>> {
        match &self.set_probe {
            None => Ok(None),
            Some(sp) => {
                let set = match &sp.set {
                    SetDeclVariant::IntervalUnion { intervals } => {
                        if intervals.len() % 2 != 0 || intervals.is_empty() {
                            return Err(Error::Validation {
                                line: 0,
                                msg: "intervals need an even number of endpoints".into(),
                            });
                        }
                        SetGeometry::Union(
                            intervals
                                .chunks(2)
                                .map(|ab| SetGeometry::Box {
                                    lo: vec![ab[0]],
                                    hi: vec![ab[1]],
                                })
                                .collect(),
                        )
                    }
                    SetDeclVariant::Ball { center, radius } => SetGeometry::Ball {
                        center: center.clone(),
                        radius: *radius,
                    },
                    SetDeclVariant::Box { lo, hi } => SetGeometry::Box {
                        lo: lo.clone(),
                        hi: hi.clone(),
                    },
                    SetDeclVariant::ComplementBall { center, radius } => {
                        SetGeometry::BallComplement {
                            center: center.clone(),
                            radius: *radius,
                        }
                    }
                };
                Ok(Some(set))
            }
        }
    }
}

/// Executable data assembled from a scenario.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub spec: ProblemSpec,
    pub control: Option<ControlProblem>,
}

fn expect_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Validation {
            line: 0,
            msg: format!("{what} has {} entries, expected {n}", v.len()),
        });
    }
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| format_value(*x))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_usize_vec(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn identity_matrix(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += a[i * d + j] * x[j];
        }
        out[i] = acc;
    }
}
