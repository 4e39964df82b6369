//! Complex-vector kernel for the four elementary geometric transformations.
//!
//! All maps act coordinate-wise on `C^d`:
//!
//! | EGT   | parameters        | map                      |
//! |-------|-------------------|--------------------------|
//! | Trans | `u ∈ C^d`         | `h + u`                  |
//! | Rot   | `θ ∈ R^d`         | `e^{iθ} ⊙ h`             |
//! | Ref   | `φ ∈ R^d`         | `e^{2iφ} ⊙ conj(h)`      |
//! | Scal  | `s ∈ R^d`         | `s ⊙ h`                  |
//!
//! The reflection closed form comes from the 2x2 matrix
//! `[[cos 2φ, sin 2φ], [sin 2φ, -cos 2φ]]` acting on `(Re z, Im z)`.
//!
//! Angles are never wrapped inside the kernel; [`wrap_angle`] exists for
//! reporting only.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Borrowed view of a complex vector stored as split real/imaginary slices.
#[derive(Debug, Clone, Copy)]
pub struct ComplexSlice<'a> {
    pub re: &'a [f64],
    pub im: &'a [f64],
}

impl ComplexVector {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), im.len(), "real and imaginary parts differ in length");
        Self { re, im }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            re: vec![0.0; dim],
            im: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.re.len()
    }

    pub fn as_slice(&self) -> ComplexSlice<'_> {
        ComplexSlice {
            re: &self.re,
            im: &self.im,
        }
    }
}

impl<'a> ComplexSlice<'a> {
    pub fn new(re: &'a [f64], im: &'a [f64]) -> Self {
        assert_eq!(re.len(), im.len(), "real and imaginary parts differ in length");
        Self { re, im }
    }

    pub fn dim(&self) -> usize {
        self.re.len()
    }

    pub fn to_vector(self) -> ComplexVector {
        ComplexVector {
            re: self.re.to_vec(),
            im: self.im.to_vec(),
        }
    }
}

impl<'a> From<&'a ComplexVector> for ComplexSlice<'a> {
    fn from(v: &'a ComplexVector) -> Self {
        v.as_slice()
    }
}

/// One of the four elementary geometric transformations.
///
/// The discriminant is the canonical storage index used by every bank and
/// attention row; presentation order is a separate [`EgtOrder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EgtKind {
    Trans = 0,
    Rot = 1,
    Ref = 2,
    Scal = 3,
}

impl EgtKind {
    pub const ALL: [EgtKind; 4] = [EgtKind::Trans, EgtKind::Rot, EgtKind::Ref, EgtKind::Scal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    pub fn name(self) -> &'static str {
        match self {
            EgtKind::Trans => "Trans",
            EgtKind::Rot => "Rot",
            EgtKind::Ref => "Ref",
            EgtKind::Scal => "Scal",
        }
    }
}

impl fmt::Display for EgtKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EgtKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trans" | "translation" => Ok(EgtKind::Trans),
            "rot" | "rotation" => Ok(EgtKind::Rot),
            "ref" | "reflection" => Ok(EgtKind::Ref),
            "scal" | "scaling" => Ok(EgtKind::Scal),
            _ => Err(Error::Config(format!("unknown EGT {s:?}"))),
        }
    }
}

/// Column order of the attention matrix; decides argmax tie-breaks and the
/// column layout of adherence files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EgtOrder([EgtKind; 4]);

impl EgtOrder {
    pub const DEFAULT: EgtOrder =
        EgtOrder([EgtKind::Trans, EgtKind::Rot, EgtKind::Ref, EgtKind::Scal]);

    pub fn new(order: [EgtKind; 4]) -> Result<Self> {
        let mut seen = [false; 4];
        for kind in order {
            if std::mem::replace(&mut seen[kind.index()], true) {
                return Err(Error::Config(format!("EGT {kind} listed twice in ordering")));
            }
        }
        Ok(Self(order))
    }

    pub fn kinds(&self) -> [EgtKind; 4] {
        self.0
    }

    /// Position of `kind` in this ordering.
    pub fn position(&self, kind: EgtKind) -> usize {
        self.0.iter().position(|&k| k == kind).expect("ordering is a permutation")
    }

    /// Index (canonical) of the largest value; exact ties go to the EGT that
    /// comes first in this ordering.
    pub fn argmax(&self, values: &[f64; 4]) -> EgtKind {
        let mut best = self.0[0];
        for &kind in &self.0[1..] {
            if values[kind.index()] > values[best.index()] {
                best = kind;
            }
        }
        best
    }
}

impl Default for EgtOrder {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for EgtOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|k| k.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for EgtOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds: Vec<EgtKind> = s.split(',').map(str::parse).collect::<Result<_>>()?;
        let kinds: [EgtKind; 4] = kinds
            .try_into()
            .map_err(|_| Error::Config(format!("EGT order {s:?} must list exactly four EGTs")))?;
        EgtOrder::new(kinds)
    }
}

/// Order of the norm used for `‖x - t‖`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NormOrder {
    L1,
    #[default]
    L2,
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(NormOrder::L1),
            "2" => Ok(NormOrder::L2),
            other => Err(Error::Config(format!("norm order must be 1 or 2, got {other:?}"))),
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormOrder::L1 => "1",
            NormOrder::L2 => "2",
        })
    }
}

/// Relation parameters for a single EGT.
#[derive(Debug, Clone, Copy)]
pub enum EgtParams<'a> {
    Trans(ComplexSlice<'a>),
    Rot(&'a [f64]),
    Ref(&'a [f64]),
    Scal(&'a [f64]),
}

impl EgtParams<'_> {
    pub fn kind(&self) -> EgtKind {
        match self {
            EgtParams::Trans(_) => EgtKind::Trans,
            EgtParams::Rot(_) => EgtKind::Rot,
            EgtParams::Ref(_) => EgtKind::Ref,
            EgtParams::Scal(_) => EgtKind::Scal,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EgtParams::Trans(u) => u.dim(),
            EgtParams::Rot(v) | EgtParams::Ref(v) | EgtParams::Scal(v) => v.len(),
        }
    }

    /// Length of the flat gradient buffer for these parameters (2d for
    /// translation, laid out re then im; d otherwise).
    pub fn grad_len(&self) -> usize {
        match self {
            EgtParams::Trans(u) => 2 * u.dim(),
            _ => self.dim(),
        }
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = angle - 2.0 * PI * ((angle + PI) / (2.0 * PI)).floor();
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

pub fn apply_translation(u: ComplexSlice, h: ComplexSlice) -> ComplexVector {
    apply(EgtParams::Trans(u), h)
}

pub fn apply_rotation(theta: &[f64], h: ComplexSlice) -> ComplexVector {
    apply(EgtParams::Rot(theta), h)
}

pub fn apply_reflection(phi: &[f64], h: ComplexSlice) -> ComplexVector {
    apply(EgtParams::Ref(phi), h)
}

pub fn apply_scaling(s: &[f64], h: ComplexSlice) -> ComplexVector {
    apply(EgtParams::Scal(s), h)
}

pub fn apply(params: EgtParams, h: ComplexSlice) -> ComplexVector {
    let mut out = ComplexVector::zeros(h.dim());
    transform_into(params, h, &mut out.re, &mut out.im);
    out
}

/// Write the transformed head into `out_re`/`out_im`.
///
/// Panics on dimension mismatch.
pub fn transform_into(params: EgtParams, h: ComplexSlice, out_re: &mut [f64], out_im: &mut [f64]) {
    let d = h.dim();
    assert_eq!(params.dim(), d, "relation parameters and head differ in dimension");
    assert!(out_re.len() == d && out_im.len() == d, "output buffer has wrong dimension");
    match params {
        EgtParams::Trans(u) => {
            for k in 0..d {
                out_re[k] = h.re[k] + u.re[k];
                out_im[k] = h.im[k] + u.im[k];
            }
        }
        EgtParams::Rot(theta) => {
            for k in 0..d {
                let (s, c) = theta[k].sin_cos();
                out_re[k] = c * h.re[k] - s * h.im[k];
                out_im[k] = s * h.re[k] + c * h.im[k];
            }
        }
        EgtParams::Ref(phi) => {
            for k in 0..d {
                let (s, c) = (2.0 * phi[k]).sin_cos();
                out_re[k] = c * h.re[k] + s * h.im[k];
                out_im[k] = s * h.re[k] - c * h.im[k];
            }
        }
        EgtParams::Scal(scale) => {
            for k in 0..d {
                out_re[k] = scale[k] * h.re[k];
                out_im[k] = scale[k] * h.im[k];
            }
        }
    }
}

/// `‖x - t‖_p` with the complex modulus per coordinate.
pub fn egt_distance(x: ComplexSlice, t: ComplexSlice, p: NormOrder) -> f64 {
    assert_eq!(x.dim(), t.dim(), "distance operands differ in dimension");
    match p {
        NormOrder::L2 => {
            let mut sum = 0.0;
            for k in 0..x.dim() {
                let a = x.re[k] - t.re[k];
                let b = x.im[k] - t.im[k];
                sum += a * a + b * b;
            }
            sum.sqrt()
        }
        NormOrder::L1 => {
            let mut sum = 0.0;
            for k in 0..x.dim() {
                sum += (x.re[k] - t.re[k]).hypot(x.im[k] - t.im[k]);
            }
            sum
        }
    }
}

/// Partial derivatives of `egt_distance(apply(params, h), t, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EgtGradients {
    pub distance: f64,
    /// Translation: `[∂u_re.., ∂u_im..]`; otherwise one entry per coordinate.
    pub rel: Vec<f64>,
    pub h: ComplexVector,
    pub t: ComplexVector,
}

impl EgtGradients {
    pub fn zeros(dim: usize, rel_len: usize) -> Self {
        Self {
            distance: 0.0,
            rel: vec![0.0; rel_len],
            h: ComplexVector::zeros(dim),
            t: ComplexVector::zeros(dim),
        }
    }
}

pub fn egt_gradients(params: EgtParams, h: ComplexSlice, t: ComplexSlice, p: NormOrder) -> EgtGradients {
    let mut out = EgtGradients::zeros(h.dim(), params.grad_len());
    egt_gradients_into(params, h, t, p, &mut out);
    out
}

/// [`egt_gradients`] writing into a reusable buffer; every field of `out` is
/// overwritten.
///
/// At a zero distance (L2) or a zero coordinate modulus (L1) the
/// corresponding subgradient is taken as zero.
pub fn egt_gradients_into(
    params: EgtParams,
    h: ComplexSlice,
    t: ComplexSlice,
    p: NormOrder,
    out: &mut EgtGradients,
) {
    let d = h.dim();
    assert_eq!(t.dim(), d, "head and tail differ in dimension");
    assert_eq!(out.h.dim(), d, "gradient buffer has wrong dimension");
    assert_eq!(out.rel.len(), params.grad_len(), "gradient buffer has wrong parameter length");

    // Transformed head goes into out.t for now; it becomes ∂/∂t below.
    transform_into(params, h, &mut out.t.re, &mut out.t.im);
    let (x_re, x_im) = (&mut out.t.re, &mut out.t.im);

    // g = ∂D/∂x stored in out.h temporarily.
    let (g_re, g_im) = (&mut out.h.re, &mut out.h.im);
    match p {
        NormOrder::L2 => {
            let mut sum = 0.0;
            for k in 0..d {
                g_re[k] = x_re[k] - t.re[k];
                g_im[k] = x_im[k] - t.im[k];
                sum += g_re[k] * g_re[k] + g_im[k] * g_im[k];
            }
            let dist = sum.sqrt();
            out.distance = dist;
            let inv = if dist > 0.0 { 1.0 / dist } else { 0.0 };
            for k in 0..d {
                g_re[k] *= inv;
                g_im[k] *= inv;
            }
        }
        NormOrder::L1 => {
            let mut dist = 0.0;
            for k in 0..d {
                let a = x_re[k] - t.re[k];
                let b = x_im[k] - t.im[k];
                let m = a.hypot(b);
                dist += m;
                let inv = if m > 0.0 { 1.0 / m } else { 0.0 };
                g_re[k] = a * inv;
                g_im[k] = b * inv;
            }
            out.distance = dist;
        }
    }

    match params {
        EgtParams::Trans(_) => {
            out.rel[..d].copy_from_slice(g_re);
            out.rel[d..].copy_from_slice(g_im);
            // ∂h = g, already in place
        }
        EgtParams::Rot(theta) => {
            for k in 0..d {
                let (s, c) = theta[k].sin_cos();
                let (ga, gb) = (g_re[k], g_im[k]);
                out.rel[k] = -ga * x_im[k] + gb * x_re[k];
                g_re[k] = ga * c + gb * s;
                g_im[k] = -ga * s + gb * c;
            }
        }
        EgtParams::Ref(phi) => {
            for k in 0..d {
                let (s, c) = (2.0 * phi[k]).sin_cos();
                let (ga, gb) = (g_re[k], g_im[k]);
                out.rel[k] = 2.0 * (-ga * x_im[k] + gb * x_re[k]);
                g_re[k] = ga * c + gb * s;
                g_im[k] = ga * s - gb * c;
            }
        }
        EgtParams::Scal(scale) => {
            for k in 0..d {
                let (ga, gb) = (g_re[k], g_im[k]);
                out.rel[k] = ga * h.re[k] + gb * h.im[k];
                g_re[k] = scale[k] * ga;
                g_im[k] = scale[k] * gb;
            }
        }
    }

    // ∂t = -∂D/∂x, rebuilt from x since g was overwritten by ∂h.
    match p {
        NormOrder::L2 => {
            let inv = if out.distance > 0.0 { 1.0 / out.distance } else { 0.0 };
            for k in 0..d {
                x_re[k] = -(x_re[k] - t.re[k]) * inv;
                x_im[k] = -(x_im[k] - t.im[k]) * inv;
            }
        }
        NormOrder::L1 => {
            for k in 0..d {
                let a = x_re[k] - t.re[k];
                let b = x_im[k] - t.im[k];
                let m = a.hypot(b);
                let inv = if m > 0.0 { 1.0 / m } else { 0.0 };
                x_re[k] = -a * inv;
                x_im[k] = -b * inv;
            }
        }
    }
}

/// Algebraic class of a composition `a ∘ b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// The composite is an EGT of the same kind as both operands.
    SameEgt(EgtKind),
    /// The composite is an EGT of a different kind.
    OtherEgt(EgtKind),
    NotEgt,
}

/// Class of `a ∘ b` and whether `a ∘ b = b ∘ a` for generic parameters.
pub fn compose_check(a: EgtKind, b: EgtKind) -> (Closure, bool) {
    use EgtKind::*;
    let closure = match (a, b) {
        (x, y) if x == y && x != Ref => Closure::SameEgt(x),
        (Ref, Ref) => Closure::OtherEgt(Rot),
        (Rot, Ref) | (Ref, Rot) => Closure::OtherEgt(Ref),
        _ => Closure::NotEgt,
    };
    let commutes = matches!(
        (a, b),
        (Trans, Trans) | (Rot, Rot) | (Scal, Scal) | (Scal, Rot) | (Rot, Scal) | (Scal, Ref) | (Ref, Scal)
    );
    (closure, commutes)
}
