//! The three model problems on the unit square.
//!
//! Problem 1 has an oscillating Dirichlet condition on the whole boundary.
//! Problem 2 adds an isolating frame near the boundary, conductivity rings
//! and a localized source. Problem 3 drives two conductor channels through a
//! Neumann inflow on the left side, with an isolator placed between them.
//!
//! The perturbation geometry of problems 2 and 3 is only known from figures;
//! it is exposed as [`Mp2Geometry`] and [`Mp3Geometry`] with documented defaults.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoundarySegment, BoundarySpec, Side};

/// Oscillation length of all model problems.
pub const EPSILON: f64 = 0.05;

pub type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub coefficient: ScalarFn,
    pub source: ScalarFn,
    /// Boundary values on the Dirichlet part.
    pub dirichlet: ScalarFn,
    /// Flux on the Neumann part.
    pub neumann: ScalarFn,
    pub gamma_n: Vec<BoundarySegment>,
    pub epsilon: f64,
    /// Human readable parameter echo; also identifies the problem in cache keys.
    pub description: String,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec").field("name", &self.name).field("description", &self.description).finish()
    }
}

impl ProblemSpec {
    pub fn boundary_spec(&self) -> BoundarySpec {
        if self.gamma_n.is_empty() {
            BoundarySpec::all_dirichlet()
        } else {
            BoundarySpec::with_neumann(self.gamma_n.clone())
        }
    }

    pub fn a(&self, x: [f64; 2]) -> f64 {
        (self.coefficient)(x)
    }

    pub fn f(&self, x: [f64; 2]) -> f64 {
        (self.source)(x)
    }

    pub fn g(&self, x: [f64; 2]) -> f64 {
        (self.dirichlet)(x)
    }

    pub fn q(&self, x: [f64; 2]) -> f64 {
        (self.neumann)(x)
    }
}

fn constant(v: f64) -> ScalarFn {
    Arc::new(move |_| v)
}

pub fn mp1_coefficient(x: [f64; 2]) -> f64 {
    1.1 + 0.5 * (x[0] / EPSILON).floor().sin() + 0.5 * (2.0 * PI * x[0] / EPSILON).cos()
}

pub fn mp1_boundary(x: [f64; 2]) -> f64 {
    (2.0 * PI * x[0] / EPSILON).sin() + (2.0 * PI * x[1] / EPSILON).cos() + 0.5 * (x[0] + x[1]).exp()
}

/// Problem 1: oscillating coefficient depending on `x1` only, oscillating
/// Dirichlet data on the whole boundary, unit source.
pub fn mp1() -> ProblemSpec {
    ProblemSpec {
        name: "mp1".into(),
        coefficient: Arc::new(mp1_coefficient),
        source: constant(1.0),
        dirichlet: Arc::new(mp1_boundary),
        neumann: constant(0.0),
        gamma_n: Vec::new(),
        epsilon: EPSILON,
        description: "mp1".into(),
    }
}

/// Problem 1 coefficient with homogeneous Dirichlet data and unit source.
pub fn mp1_homogeneous() -> ProblemSpec {
    ProblemSpec {
        name: "mp1-homogeneous".into(),
        dirichlet: constant(0.0),
        description: "mp1-homogeneous".into(),
        ..mp1()
    }
}

/// Perturbation geometry of problem 2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mp2Geometry {
    /// Distance of the inner rim of the isolating frame from the boundary
    /// (maximum norm).
    pub frame_offset: f64,
    pub frame_thickness: f64,
    pub frame_value: f64,
    /// Radius of the ring structure around the center.
    pub ring_radius: f64,
    pub ring_width: f64,
    /// Value of rings with even index counted from the center.
    pub ring_even: f64,
    pub ring_odd: f64,
    pub source_radius: f64,
    pub source_value: f64,
}

impl Default for Mp2Geometry {
    fn default() -> Self {
        Mp2Geometry {
            frame_offset: EPSILON,
            frame_thickness: EPSILON,
            frame_value: 0.01,
            ring_radius: 0.25,
            ring_width: EPSILON,
            ring_even: 1.0,
            ring_odd: 0.1,
            source_radius: 0.05,
            source_value: 20.0,
        }
    }
}

impl Mp2Geometry {
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "frame_offset" => &mut self.frame_offset,
            "frame_thickness" => &mut self.frame_thickness,
            "frame_value" => &mut self.frame_value,
            "ring_radius" => &mut self.ring_radius,
            "ring_width" => &mut self.ring_width,
            "ring_even" => &mut self.ring_even,
            "ring_odd" => &mut self.ring_odd,
            "source_radius" => &mut self.source_radius,
            "source_value" => &mut self.source_value,
            _ => return Err(Error::Config(format!("unknown mp2 parameter '{key}'"))),
        };
        *slot = value;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.frame_thickness, self.frame_value, self.ring_width, self.ring_even, self.ring_odd];
        if positive.iter().any(|v| !(*v > 0.0)) || self.frame_offset < 0.0 || self.ring_radius < 0.0 {
            return Err(Error::Config("mp2 geometry values must be positive".into()));
        }
        Ok(())
    }
}

pub fn mp2_base(x: [f64; 2]) -> f64 {
    0.1 * (2.0 + (2.0 * PI * x[0] / EPSILON).cos())
}

pub fn mp2() -> ProblemSpec {
    mp2_with(Mp2Geometry::default()).expect("default geometry is valid")
}

/// Problem 2: isolating frame, conductivity rings and a ball source; `g = x1`.
pub fn mp2_with(geom: Mp2Geometry) -> Result<ProblemSpec> {
    geom.validate()?;
    let coefficient = move |x: [f64; 2]| {
        let d = x[0].min(1.0 - x[0]).min(x[1]).min(1.0 - x[1]);
        if d >= geom.frame_offset && d <= geom.frame_offset + geom.frame_thickness {
            return geom.frame_value;
        }
        let r = (x[0] - 0.5).hypot(x[1] - 0.5);
        if r < geom.ring_radius {
            return if ((r / geom.ring_width).floor() as i64) % 2 == 0 { geom.ring_even } else { geom.ring_odd };
        }
        mp2_base(x)
    };
    let source = move |x: [f64; 2]| {
        if (x[0] - 0.5).hypot(x[1] - 0.5) <= geom.source_radius {
            geom.source_value
        } else {
            0.0
        }
    };
    Ok(ProblemSpec {
        name: "mp2".into(),
        coefficient: Arc::new(coefficient),
        source: Arc::new(source),
        dirichlet: Arc::new(|x: [f64; 2]| x[0]),
        neumann: constant(0.0),
        gamma_n: Vec::new(),
        epsilon: EPSILON,
        description: format!("mp2 {}", serde_json::to_string(&geom).expect("plain struct")),
    })
}

/// Perturbation geometry of problem 3. Rectangles are closed and axis aligned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mp3Geometry {
    pub conductor_value: f64,
    pub conductor_length: f64,
    pub conductor_thickness: f64,
    /// Lower edges of the two conductors; they start at `x1 = 0`.
    pub conductor_y: [f64; 2],
    pub isolator_value: f64,
    pub isolator_length: f64,
    pub isolator_thickness: f64,
    pub isolator_center: [f64; 2],
    pub isolator_vertical: bool,
    /// Inflow flux on the two Neumann stripes.
    pub inflow: f64,
}

impl Default for Mp3Geometry {
    fn default() -> Self {
        Mp3Geometry {
            conductor_value: 20.0,
            conductor_length: 0.8,
            conductor_thickness: EPSILON,
            conductor_y: [0.2, 0.8 - EPSILON],
            isolator_value: 0.01,
            isolator_length: 0.3,
            isolator_thickness: EPSILON,
            isolator_center: [0.5, 0.5],
            isolator_vertical: true,
            inflow: 2.0,
        }
    }
}

impl Mp3Geometry {
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "conductor_value" => &mut self.conductor_value,
            "conductor_length" => &mut self.conductor_length,
            "conductor_thickness" => &mut self.conductor_thickness,
            "conductor_y0" => &mut self.conductor_y[0],
            "conductor_y1" => &mut self.conductor_y[1],
            "isolator_value" => &mut self.isolator_value,
            "isolator_length" => &mut self.isolator_length,
            "isolator_thickness" => &mut self.isolator_thickness,
            "isolator_x" => &mut self.isolator_center[0],
            "isolator_y" => &mut self.isolator_center[1],
            "inflow" => &mut self.inflow,
            "isolator_vertical" => {
                self.isolator_vertical = value != 0.0;
                return Ok(());
            }
            _ => return Err(Error::Config(format!("unknown mp3 parameter '{key}'"))),
        };
        *slot = value;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            self.conductor_value,
            self.conductor_length,
            self.conductor_thickness,
            self.isolator_value,
            self.isolator_length,
            self.isolator_thickness,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("mp3 geometry values must be positive".into()));
        }
        Ok(())
    }

    /// Isolator rectangle as `[x0, x1, y0, y1]`.
    pub fn isolator_box(&self) -> [f64; 4] {
        let (hl, ht) = (0.5 * self.isolator_length, 0.5 * self.isolator_thickness);
        let [cx, cy] = self.isolator_center;
        if self.isolator_vertical {
            [cx - ht, cx + ht, cy - hl, cy + hl]
        } else {
            [cx - hl, cx + hl, cy - ht, cy + ht]
        }
    }
}

pub fn mp3_base(x: [f64; 2]) -> f64 {
    let cells = (x[0] / EPSILON).floor() + (x[1] / EPSILON).floor();
    1.2 + 0.5 * ((x[0] + x[1]).floor() + cells).sin() + 0.5 * ((x[0] - x[1]).floor() + cells).cos()
}

pub fn mp3() -> ProblemSpec {
    mp3_with(Mp3Geometry::default()).expect("default geometry is valid")
}

/// Problem 3: conductor channels fed by a Neumann inflow on the left side,
/// an isolator between them, `f = 0` and `g = 0`.
pub fn mp3_with(geom: Mp3Geometry) -> Result<ProblemSpec> {
    geom.validate()?;
    let iso = geom.isolator_box();
    let coefficient = move |x: [f64; 2]| {
        if x[0] >= iso[0] && x[0] <= iso[1] && x[1] >= iso[2] && x[1] <= iso[3] {
            return geom.isolator_value;
        }
        for y0 in geom.conductor_y {
            if x[0] <= geom.conductor_length && x[1] >= y0 && x[1] <= y0 + geom.conductor_thickness {
                return geom.conductor_value;
            }
        }
        mp3_base(x)
    };
    let neumann = move |x: [f64; 2]| {
        let y = x[1];
        if (0.2..=0.2 + EPSILON).contains(&y) || (0.8 - EPSILON..=0.8).contains(&y) {
            geom.inflow
        } else {
            0.0
        }
    };
    Ok(ProblemSpec {
        name: "mp3".into(),
        coefficient: Arc::new(coefficient),
        source: constant(0.0),
        dirichlet: constant(0.0),
        neumann: Arc::new(neumann),
        gamma_n: vec![BoundarySegment { side: Side::Left, from: 0.0, to: 1.0 }],
        epsilon: EPSILON,
        description: format!("mp3 {}", serde_json::to_string(&geom).expect("plain struct")),
    })
}

/// Problem by name with `key=value` geometry overrides.
pub fn by_name(name: &str, overrides: &[(String, f64)]) -> Result<ProblemSpec> {
    match name {
        "mp1" | "mp1-homogeneous" => {
            if let Some((k, _)) = overrides.first() {
                return Err(Error::Config(format!("{name} has no parameter '{k}'")));
            }
            Ok(if name == "mp1" { mp1() } else { mp1_homogeneous() })
        }
        "mp2" => {
            let mut g = Mp2Geometry::default();
            for (k, v) in overrides {
                g.set(k, *v)?;
            }
            mp2_with(g)
        }
        "mp3" => {
            let mut g = Mp3Geometry::default();
            for (k, v) in overrides {
                g.set(k, *v)?;
            }
            mp3_with(g)
        }
        _ => Err(Error::Config(format!("unknown problem '{name}' (expected mp1, mp1-homogeneous, mp2, mp3)"))),
    }
}
