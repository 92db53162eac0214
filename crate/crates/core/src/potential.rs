//! Compactly supported branching potentials `W >= 0` on `[0, 1]`.
//!
//! The branching rate is `r(x) = (1 + W(x)) / 2`; outside `[0, 1]` the
//! potential vanishes and the rate is `1/2`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Zero,
    /// `height * 1_[0, width]`
    Step {
        height: f64,
        #[serde(default = "one")]
        width: f64,
    },
    /// Piecewise linear through `(xs[i], ws[i])`, zero outside the table range.
    Table { xs: Vec<f64>, ws: Vec<f64> },
    /// Smooth bump `amplitude * exp(1 - 1/(1 - (2x-1)^2))` on `(0, 1)`.
    Bump { amplitude: f64 },
}

fn one() -> f64 {
    1.0
}

/// A piece of `[0, 1]` on which the potential is either constant or needs
/// numerical integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Constant { a: f64, b: f64, w: f64 },
    Variable { a: f64, b: f64 },
}

impl Piece {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Piece::Constant { a, b, .. } | Piece::Variable { a, b } => (a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub shape: Shape,
    /// Multiplier applied to the shape, used for `W = eps * W~` families.
    #[serde(default = "one")]
    pub scale: f64,
}

impl Potential {
    pub fn new(shape: Shape) -> Result<Self> {
        let p = Potential { shape, scale: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn zero() -> Self {
        Potential {
            shape: Shape::Zero,
            scale: 1.0,
        }
    }

    pub fn step(height: f64) -> Result<Self> {
        Self::new(Shape::Step { height, width: 1.0 })
    }

    pub fn bump(amplitude: f64) -> Result<Self> {
        Self::new(Shape::Bump { amplitude })
    }

    pub fn table(xs: Vec<f64>, ws: Vec<f64>) -> Result<Self> {
        Self::new(Shape::Table { xs, ws })
    }

    /// Reads a two column CSV `x, W(x)`; a header row is allowed.
    pub fn from_table_file(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::InvalidPotential(format!(
                    "table row has {} columns",
                    rec.len()
                )));
            }
            let (Ok(x), Ok(w)) = (rec[0].parse::<f64>(), rec[1].parse::<f64>()) else {
                if xs.is_empty() {
                    continue; // header
                }
                return Err(Error::InvalidPotential(format!("bad table row {rec:?}")));
            };
            xs.push(x);
            ws.push(w);
        }
        Self::table(xs, ws)
    }

    /// Parses `zero`, `step:<b>` or `table:<file>`.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        if spec == "zero" {
            return Ok(Self::zero());
        }
        if let Some(b) = spec.strip_prefix("step:") {
            let b: f64 = b
                .parse()
                .map_err(|_| Error::InvalidPotential(format!("bad step height {b:?}")))?;
            return Self::step(b);
        }
        if let Some(b) = spec.strip_prefix("bump:") {
            let b: f64 = b
                .parse()
                .map_err(|_| Error::InvalidPotential(format!("bad bump amplitude {b:?}")))?;
            return Self::bump(b);
        }
        if let Some(f) = spec.strip_prefix("table:") {
            return Self::from_table_file(Path::new(f));
        }
        Err(Error::InvalidPotential(format!("unknown potential {spec:?}")))
    }

    /// `eps * self`.
    pub fn scaled(&self, eps: f64) -> Self {
        Potential {
            shape: self.shape.clone(),
            scale: self.scale * eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::InvalidPotential(format!("scale {}", self.scale)));
        }
        match &self.shape {
            Shape::Zero => Ok(()),
            Shape::Step { height, width } => {
                if !(height.is_finite() && *height >= 0.0) {
                    return Err(Error::InvalidPotential(format!("step height {height}")));
                }
                if !(*width > 0.0 && *width <= 1.0) {
                    return Err(Error::InvalidPotential(format!(
                        "step width {width} outside (0, 1]"
                    )));
                }
                Ok(())
            }
            Shape::Bump { amplitude } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(Error::InvalidPotential(format!("bump amplitude {amplitude}")));
                }
                Ok(())
            }
            Shape::Table { xs, ws } => {
                if xs.len() != ws.len() || xs.len() < 2 {
                    return Err(Error::InvalidPotential(
                        "table needs at least two rows".into(),
                    ));
                }
                if xs.windows(2).any(|p| p[1] <= p[0]) {
                    return Err(Error::InvalidPotential(
                        "table abscissae must increase".into(),
                    ));
                }
                if xs[0] < 0.0 || xs[xs.len() - 1] > 1.0 {
                    return Err(Error::InvalidPotential(
                        "table must lie inside [0, 1]".into(),
                    ));
                }
                if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidPotential(
                        "table values must be finite and non-negative".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn w(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        self.scale
            * match &self.shape {
                Shape::Zero => 0.0,
                Shape::Step { height, width } => {
                    if x <= *width {
                        *height
                    } else {
                        0.0
                    }
                }
                Shape::Bump { amplitude } => {
                    let z = 2.0 * x - 1.0;
                    let d = 1.0 - z * z;
                    if d <= 0.0 {
                        0.0
                    } else {
                        amplitude * (1.0 - 1.0 / d).exp()
                    }
                }
                Shape::Table { xs, ws } => {
                    if x < xs[0] || x > xs[xs.len() - 1] {
                        return 0.0;
                    }
                    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
                    let (x0, x1) = (xs[i - 1], xs[i]);
                    let s = (x - x0) / (x1 - x0);
                    ws[i - 1] + s * (ws[i] - ws[i - 1])
                }
            }
    }

    /// Branching rate `(1 + W(x)) / 2`.
    pub fn rate(&self, x: f64) -> f64 {
        0.5 * (1.0 + self.w(x))
    }

    pub fn sup(&self) -> f64 {
        self.scale
            * match &self.shape {
                Shape::Zero => 0.0,
                Shape::Step { height, .. } => *height,
                Shape::Bump { amplitude } => *amplitude,
                Shape::Table { ws, .. } => ws.iter().cloned().fold(0.0, f64::max),
            }
    }

    pub fn max_rate(&self) -> f64 {
        0.5 * (1.0 + self.sup())
    }

    pub fn is_zero(&self) -> bool {
        self.sup() == 0.0
    }

    /// Right end of the support.
    pub fn support_right(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Step { width, .. } => *width,
            Shape::Bump { .. } => 1.0,
            Shape::Table { xs, ws } => {
                let mut last = xs[0];
                for i in 0..xs.len() {
                    if ws[i] > 0.0 {
                        last = if i + 1 < xs.len() { xs[i + 1] } else { xs[i] };
                    }
                }
                last
            }
        }
    }

    /// Decomposition of `[0, 1]` into constant and variable pieces.
    pub fn pieces(&self) -> Vec<Piece> {
        if self.is_zero() {
            return vec![Piece::Constant { a: 0.0, b: 1.0, w: 0.0 }];
        }
        let mut out = Vec::new();
        match &self.shape {
            Shape::Zero => unreachable!(),
            Shape::Step { height, width } => {
                out.push(Piece::Constant {
                    a: 0.0,
                    b: *width,
                    w: self.scale * height,
                });
                if *width < 1.0 {
                    out.push(Piece::Constant { a: *width, b: 1.0, w: 0.0 });
                }
            }
            Shape::Bump { .. } => out.push(Piece::Variable { a: 0.0, b: 1.0 }),
            Shape::Table { xs, ws } => {
                if xs[0] > 0.0 {
                    out.push(Piece::Constant { a: 0.0, b: xs[0], w: 0.0 });
                }
                for i in 1..xs.len() {
                    let (a, b) = (xs[i - 1], xs[i]);
                    if ws[i - 1] == ws[i] {
                        out.push(Piece::Constant { a, b, w: self.scale * ws[i] });
                    } else {
                        out.push(Piece::Variable { a, b });
                    }
                }
                let last = xs[xs.len() - 1];
                if last < 1.0 {
                    out.push(Piece::Constant { a: last, b: 1.0, w: 0.0 });
                }
            }
        }
        out
    }

    /// Short human readable label.
    pub fn label(&self) -> String {
        let body = match &self.shape {
            Shape::Zero => "zero".to_string(),
            Shape::Step { height, width } if *width == 1.0 => format!("step:{height}"),
            Shape::Step { height, width } => format!("step:{height}@{width}"),
            Shape::Bump { amplitude } => format!("bump:{amplitude}"),
            Shape::Table { xs, .. } => format!("table[{}]", xs.len()),
        };
        if self.scale == 1.0 {
            body
        } else {
            format!("{}*{}", self.scale, body)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_rate() {
        let p = Potential::step(10.0).unwrap();
        assert_eq!(p.rate(0.5), 5.5);
        assert_eq!(p.rate(1.5), 0.5);
        assert_eq!(p.max_rate(), 5.5);
        assert_eq!(p.support_right(), 1.0);
    }

    #[test]
    fn table_interpolates() {
        let p = Potential::table(vec![0.0, 0.5, 1.0], vec![2.0, 4.0, 0.0]).unwrap();
        assert!((p.w(0.25) - 3.0).abs() < 1e-15);
        assert!((p.w(0.75) - 2.0).abs() < 1e-15);
        assert_eq!(p.w(1.2), 0.0);
        assert_eq!(p.pieces().len(), 2);
    }

    #[test]
    fn rejects_negative() {
        assert!(Potential::step(-1.0).is_err());
        assert!(Potential::table(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(Potential::table(vec![0.0, 1.5], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn parse_specs() {
        assert!(Potential::parse_spec("zero").unwrap().is_zero());
        assert_eq!(Potential::parse_spec("step:10").unwrap().sup(), 10.0);
        assert!(Potential::parse_spec("nope").is_err());
    }

    #[test]
    fn scaled_bump() {
        let p = Potential::bump(1.0).unwrap().scaled(0.5);
        assert!((p.w(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(p.w(0.0), 0.0);
    }
}
