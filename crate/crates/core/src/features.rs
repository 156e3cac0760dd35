//! Polynomial feature maps for the critic `phi(x, u)` and the actor `theta(x)`.
//!
//! A basis is an ordered list of monomials over the concatenated coordinate
//! vector `(x_1..x_n, u_1..u_m)` (critic) or `(x_1..x_n)` (actor). There is
//! never a constant term, so every feature vanishes at the origin.

use std::fmt;

use nalgebra::DVector;

use crate::error::{LpcError, Result};

/// Exponent tuple of a single monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial {
    exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Result<Self> {
        if exponents.iter().sum::<u32>() == 0 {
            return Err(LpcError::InvalidArgument(
                "monomial must have total degree >= 1".into(),
            ));
        }
        Ok(Monomial { exponents })
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(z)
            .map(|(&p, &v)| pow(v, p))
            .product()
    }

    /// `order`-th partial derivative with respect to coordinate `coord`.
    pub fn partial(&self, z: &[f64], coord: usize, order: u32) -> f64 {
        let p = self.exponents[coord];
        if order > p {
            return 0.0;
        }
        let falling: f64 = (0..order).map(|k| f64::from(p - k)).product();
        let rest: f64 = self
            .exponents
            .iter()
            .zip(z)
            .enumerate()
            .map(|(c, (&e, &v))| {
                if c == coord {
                    pow(v, e - order)
                } else {
                    pow(v, e)
                }
            })
            .product();
        falling * rest
    }
}

fn pow(v: f64, p: u32) -> f64 {
    match p {
        0 => 1.0,
        1 => v,
        2 => v * v,
        _ => v.powi(p as i32),
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .exponents
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(c, &p)| {
                if p == 1 {
                    format!("z{}", c + 1)
                } else {
                    format!("z{}^{}", c + 1, p)
                }
            })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// Features over state and input.
    Critic,
    /// Features over the state only.
    Actor,
}

/// How to build a basis: a named preset or every monomial up to a degree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BasisRule {
    Preset(String),
    Degree(u32),
    /// Like `Degree`, dropping critic monomials whose input degree exceeds the cap.
    CappedDegree {
        degree: u32,
        input_degree: u32,
    },
}

impl BasisRule {
    /// Parses `lq6`, `cubic13`, `lin2`, `quad5`, `polyD` or `polyDuK`
    /// (D in 1..=3, input degree at most K).
    pub fn parse(name: &str) -> Result<Self> {
        let name = name.trim();
        if let Some(rest) = name.strip_prefix("poly") {
            let unknown = || LpcError::UnknownPreset(name.to_string());
            return match rest.split_once('u') {
                None => rest
                    .parse::<u32>()
                    .map(BasisRule::Degree)
                    .map_err(|_| unknown()),
                Some((d, k)) => Ok(BasisRule::CappedDegree {
                    degree: d.parse().map_err(|_| unknown())?,
                    input_degree: k.parse().map_err(|_| unknown())?,
                }),
            };
        }
        if PRESETS.iter().any(|p| p.0 == name) {
            Ok(BasisRule::Preset(name.to_string()))
        } else {
            Err(LpcError::UnknownPreset(name.to_string()))
        }
    }
}

/// (name, kind, exponent rows over (x1, x2[, u]))
type Preset = (&'static str, BasisKind, &'static [&'static [u32]]);

const PRESETS: [Preset; 4] = [
    (
        "lq6",
        BasisKind::Critic,
        &[
            &[2, 0, 0],
            &[0, 2, 0],
            &[1, 1, 0],
            &[1, 0, 1],
            &[0, 1, 1],
            &[0, 0, 2],
        ],
    ),
    (
        "cubic13",
        BasisKind::Critic,
        &[
            &[2, 0, 0],
            &[0, 2, 0],
            &[1, 1, 0],
            &[1, 0, 1],
            &[0, 1, 1],
            &[0, 0, 2],
            &[3, 0, 0],
            &[0, 3, 0],
            &[2, 1, 0],
            &[1, 2, 0],
            &[2, 0, 1],
            &[0, 2, 1],
            &[1, 1, 1],
        ],
    ),
    ("lin2", BasisKind::Actor, &[&[1, 0], &[0, 1]]),
    (
        "quad5",
        BasisKind::Actor,
        &[&[1, 0], &[0, 1], &[2, 0], &[0, 2], &[1, 1]],
    ),
];

/// An ordered monomial basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    name: String,
    kind: BasisKind,
    n: usize,
    m: usize,
    monomials: Vec<Monomial>,
}

/// Builds a basis from a preset name or a maximum degree.
///
/// Presets are fixed lists for `n = 2`, `m = 1`. Generated bases hold every
/// monomial of total degree `1..=degree`, graded and then lexicographically
/// descending in the leading coordinate.
pub fn build_basis(rule: &BasisRule, n: usize, m: usize, kind: BasisKind) -> Result<BasisSpec> {
    if n == 0 {
        return Err(LpcError::InvalidArgument(
            "state dimension must be >= 1".into(),
        ));
    }
    match rule {
        BasisRule::Preset(name) => {
            let (_, preset_kind, rows) = PRESETS
                .iter()
                .find(|p| p.0 == name)
                .ok_or_else(|| LpcError::UnknownPreset(name.clone()))?;
            if *preset_kind != kind {
                return Err(LpcError::InvalidArgument(format!(
                    "preset `{name}` is a {preset_kind:?} basis, requested {kind:?}"
                )));
            }
            if n != 2 {
                return Err(LpcError::dim("preset basis state", 2, n));
            }
            if kind == BasisKind::Critic && m != 1 {
                return Err(LpcError::dim("preset basis input", 1, m));
            }
            let monomials = rows
                .iter()
                .map(|r| Monomial::new(r.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            Ok(BasisSpec {
                name: name.clone(),
                kind,
                n,
                m,
                monomials,
            })
        }
        BasisRule::Degree(d) => generated(*d, None, n, m, kind),
        BasisRule::CappedDegree {
            degree,
            input_degree,
        } => generated(*degree, Some(*input_degree), n, m, kind),
    }
}

fn generated(
    d: u32,
    input_cap: Option<u32>,
    n: usize,
    m: usize,
    kind: BasisKind,
) -> Result<BasisSpec> {
    if !(1..=3).contains(&d) {
        return Err(LpcError::InvalidArgument(format!(
            "generated basis degree must be in 1..=3, got {d}"
        )));
    }
    let coords = match kind {
        BasisKind::Critic => n + m,
        BasisKind::Actor => n,
    };
    let mut monomials = Vec::new();
    for deg in 1..=d {
        let mut buf = vec![0u32; coords];
        graded_lex(deg, 0, &mut buf, &mut monomials);
    }
    let name = match input_cap {
        Some(cap) if kind == BasisKind::Critic => {
            monomials.retain(|mono| mono.exponents[n..].iter().sum::<u32>() <= cap);
            format!("poly{d}u{cap}")
        }
        _ => format!("poly{d}"),
    };
    Ok(BasisSpec {
        name,
        kind,
        n,
        m,
        monomials,
    })
}

fn graded_lex(remaining: u32, coord: usize, buf: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if coord == buf.len() - 1 {
        buf[coord] = remaining;
        out.push(Monomial {
            exponents: buf.clone(),
        });
        buf[coord] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        buf[coord] = p;
        graded_lex(remaining - p, coord + 1, buf, out);
    }
    buf[coord] = 0;
}

impl BasisSpec {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.monomials
            .iter()
            .map(Monomial::degree)
            .max()
            .unwrap_or(0)
    }

    fn input_coords(&self) -> usize {
        match self.kind {
            BasisKind::Critic => self.m,
            BasisKind::Actor => 0,
        }
    }

    fn stack(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(LpcError::dim("basis state", self.n, x.len()));
        }
        if u.len() != self.input_coords() {
            return Err(LpcError::dim("basis input", self.input_coords(), u.len()));
        }
        let mut z = Vec::with_capacity(x.len() + u.len());
        z.extend_from_slice(x);
        z.extend_from_slice(u);
        Ok(z)
    }

    /// Feature vector at `(x, u)`. Actor bases take an empty `u`.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        let z = self.stack(x, u)?;
        Ok(DVector::from_iterator(
            self.len(),
            self.monomials.iter().map(|mono| mono.eval(&z)),
        ))
    }

    /// Feature vector of an actor basis at `x`.
    pub fn eval_state(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.eval(x, &[])
    }

    /// `order`-th partial derivative of every feature with respect to input `k`.
    pub fn partial_input(
        &self,
        x: &[f64],
        u: &[f64],
        k: usize,
        order: u32,
    ) -> Result<DVector<f64>> {
        let z = self.stack(x, u)?;
        if self.kind == BasisKind::Actor {
            return Ok(DVector::zeros(self.len()));
        }
        if k >= self.m {
            return Err(LpcError::dim("basis input index", self.m, k + 1));
        }
        let coord = self.n + k;
        Ok(DVector::from_iterator(
            self.len(),
            self.monomials
                .iter()
                .map(|mono| mono.partial(&z, coord, order)),
        ))
    }

    fn scalar_input(&self) -> Result<()> {
        if self.kind == BasisKind::Critic && self.m != 1 {
            return Err(LpcError::dim("scalar-input derivative", 1, self.m));
        }
        Ok(())
    }

    /// `d phi / d u` for a scalar input.
    pub fn grad_u(&self, x: &[f64], u: f64) -> Result<DVector<f64>> {
        self.scalar_input()?;
        match self.kind {
            BasisKind::Critic => self.partial_input(x, &[u], 0, 1),
            BasisKind::Actor => self.eval_state(x).map(|v| v * 0.0),
        }
    }

    /// `d^2 phi / d u^2` for a scalar input.
    pub fn hess_u(&self, x: &[f64], u: f64) -> Result<DVector<f64>> {
        self.scalar_input()?;
        match self.kind {
            BasisKind::Critic => self.partial_input(x, &[u], 0, 2),
            BasisKind::Actor => self.eval_state(x).map(|v| v * 0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lq6() -> BasisSpec {
        build_basis(&BasisRule::Preset("lq6".into()), 2, 1, BasisKind::Critic).unwrap()
    }

    #[test]
    fn preset_sizes() {
        assert_eq!(lq6().len(), 6);
        let c = build_basis(
            &BasisRule::Preset("cubic13".into()),
            2,
            1,
            BasisKind::Critic,
        )
        .unwrap();
        assert_eq!(c.len(), 13);
        assert_eq!(c.max_degree(), 3);
        let q = build_basis(&BasisRule::Preset("quad5".into()), 2, 1, BasisKind::Actor).unwrap();
        assert_eq!(q.len(), 5);
    }

    #[test]
    fn degree_one_actor_is_identity() {
        let b = build_basis(&BasisRule::Degree(1), 2, 0, BasisKind::Actor).unwrap();
        let exps: Vec<_> = b
            .monomials()
            .iter()
            .map(|m| m.exponents().to_vec())
            .collect();
        assert_eq!(exps, vec![vec![1, 0], vec![0, 1]]);
        let lin2 = build_basis(&BasisRule::Preset("lin2".into()), 2, 1, BasisKind::Actor).unwrap();
        assert_eq!(
            lin2.eval_state(&[3.0, 4.0]).unwrap().as_slice(),
            &[3.0, 4.0]
        );
    }

    #[test]
    fn generated_counts() {
        // C(n + d, d) - 1 monomials
        let c = build_basis(&BasisRule::Degree(3), 4, 1, BasisKind::Critic).unwrap();
        assert_eq!(c.len(), 55);
        let a = build_basis(&BasisRule::Degree(2), 4, 1, BasisKind::Actor).unwrap();
        assert_eq!(a.len(), 14);
        assert_eq!(a.input_dim(), 1);

        let capped = |k| BasisRule::CappedDegree {
            degree: 3,
            input_degree: k,
        };
        // drops u^3; then also u^2, x1 u^2, x2 u^2
        assert_eq!(
            build_basis(&capped(2), 2, 1, BasisKind::Critic)
                .unwrap()
                .len(),
            18
        );
        assert_eq!(
            build_basis(&capped(1), 2, 1, BasisKind::Critic)
                .unwrap()
                .len(),
            15
        );
        assert_eq!(
            build_basis(&capped(2), 4, 1, BasisKind::Critic)
                .unwrap()
                .len(),
            54
        );
        let b = build_basis(&capped(2), 4, 1, BasisKind::Critic).unwrap();
        assert!(b.monomials().iter().all(|mono| mono.exponents()[4] <= 2));
        assert_eq!(b.name(), "poly3u2");
    }

    #[test]
    fn lq6_values_and_derivatives() {
        let b = lq6();
        let x = [1.0, -0.5];
        let phi = b.eval(&x, &[2.0]).unwrap();
        assert_eq!(phi.as_slice(), &[1.0, 0.25, -0.5, 2.0, -1.0, 4.0]);
        let g = b.grad_u(&x, 2.0).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0, 1.0, -0.5, 4.0]);
        let h = b.hess_u(&[0.3, 7.0], -1.5).unwrap();
        assert_eq!(h.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        // u^2 feature has zero slope at u = 0
        assert_eq!(b.grad_u(&x, 0.0).unwrap()[5], 0.0);
    }

    #[test]
    fn origin_maps_to_zero() {
        for name in ["lq6", "cubic13"] {
            let b = build_basis(&BasisRule::Preset(name.into()), 2, 1, BasisKind::Critic).unwrap();
            assert!(b
                .eval(&[0.0, 0.0], &[0.0])
                .unwrap()
                .iter()
                .all(|&v| v == 0.0));
        }
        let b = build_basis(&BasisRule::Degree(3), 4, 1, BasisKind::Critic).unwrap();
        assert!(b.eval(&[0.0; 4], &[0.0]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_free_bases_have_zero_u_derivatives() {
        let a = build_basis(&BasisRule::Preset("quad5".into()), 2, 1, BasisKind::Actor).unwrap();
        assert!(a
            .grad_u(&[0.4, 0.2], 1.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let d1 = build_basis(&BasisRule::Degree(1), 2, 1, BasisKind::Critic).unwrap();
        assert!(d1
            .hess_u(&[0.4, 0.2], 1.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let c = build_basis(
            &BasisRule::Preset("cubic13".into()),
            2,
            1,
            BasisKind::Critic,
        )
        .unwrap();
        // x1^2 u is linear in u
        assert_eq!(c.hess_u(&[1.3, -0.2], 0.7).unwrap()[10], 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            BasisRule::parse("rbf9"),
            Err(LpcError::UnknownPreset("rbf9".into()))
        );
        assert!(matches!(
            build_basis(&BasisRule::Preset("lq6".into()), 3, 1, BasisKind::Critic),
            Err(LpcError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            lq6().eval(&[1.0], &[0.0]),
            Err(LpcError::DimensionMismatch { .. })
        ));
        assert!(build_basis(&BasisRule::Degree(4), 2, 1, BasisKind::Critic).is_err());
    }

    #[test]
    fn parse_rules() {
        assert_eq!(BasisRule::parse("poly2").unwrap(), BasisRule::Degree(2));
        assert_eq!(
            BasisRule::parse("poly3u2").unwrap(),
            BasisRule::CappedDegree {
                degree: 3,
                input_degree: 2
            }
        );
        assert!(BasisRule::parse("poly3u").is_err());
        assert_eq!(
            BasisRule::parse("lq6").unwrap(),
            BasisRule::Preset("lq6".into())
        );
    }

    #[test]
    fn ordering_is_stable() {
        let a = build_basis(&BasisRule::Degree(3), 4, 1, BasisKind::Critic).unwrap();
        let b = build_basis(&BasisRule::Degree(3), 4, 1, BasisKind::Critic).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.monomials()[0].exponents(), &[1, 0, 0, 0, 0]);
        assert_eq!(a.monomials()[5].exponents(), &[2, 0, 0, 0, 0]);
    }
}
