use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Factor, HilbertLayout, C64};
use crate::error::{Error, Result};

/// Dense operator on a [`HilbertLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: HilbertLayout,
    matrix: DMatrix<C64>,
}

fn local_annihilation(cutoff: usize) -> DMatrix<C64> {
    let mut a = DMatrix::zeros(cutoff, cutoff);
    for n in 1..cutoff {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

fn pauli(kind: char) -> DMatrix<C64> {
    let (z, o, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    let entries = match kind {
        'x' => [z, o, o, z],
        'y' => [z, -i, i, z],
        'z' => [o, z, z, -o],
        '+' => [z, o, z, z],
        '-' => [z, z, o, z],
        _ => unreachable!(),
    };
    DMatrix::from_row_slice(2, 2, &entries)
}

impl Operator {
    pub fn new(layout: HilbertLayout, matrix: DMatrix<C64>) -> Result<Self> {
        let d = layout.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: matrix.nrows() });
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: &HilbertLayout) -> Self {
        let d = layout.dim();
        Self { layout: layout.clone(), matrix: DMatrix::zeros(d, d) }
    }

    pub fn identity(layout: &HilbertLayout) -> Self {
        let d = layout.dim();
        Self { layout: layout.clone(), matrix: DMatrix::identity(d, d) }
    }

    /// Embeds a local operator acting on one tensor factor: `I ⊗ local ⊗ I`.
    pub fn embed(layout: &HilbertLayout, factor: Factor, local: &DMatrix<C64>) -> Result<Self> {
        let (before, size, after) = layout.surrounding_dims(factor)?;
        if local.nrows() != size || local.ncols() != size {
            return Err(Error::DimensionMismatch { expected: size, got: local.nrows() });
        }
        let d = layout.dim();
        let mut m = DMatrix::zeros(d, d);
        // Block structure: index = (b * size + s) * after + r.
        for b in 0..before {
            for (i, j) in (0..size).flat_map(|i| (0..size).map(move |j| (i, j))) {
                let v = local[(i, j)];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                for r in 0..after {
                    m[((b * size + i) * after + r, (b * size + j) * after + r)] = v;
                }
            }
        }
        Ok(Self { layout: layout.clone(), matrix: m })
    }

    pub fn annihilation(layout: &HilbertLayout, mode: usize) -> Result<Self> {
        let cut = layout.mode_cutoff(mode)?;
        Self::embed(layout, Factor::Mode(mode), &local_annihilation(cut))
    }

    pub fn creation(layout: &HilbertLayout, mode: usize) -> Result<Self> {
        Ok(Self::annihilation(layout, mode)?.adjoint())
    }

    pub fn number(layout: &HilbertLayout, mode: usize) -> Result<Self> {
        let cut = layout.mode_cutoff(mode)?;
        let local = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(cut, |n, _| {
            C64::new(n as f64, 0.0)
        }));
        Self::embed(layout, Factor::Mode(mode), &local)
    }

    pub fn sigma_x(layout: &HilbertLayout) -> Result<Self> {
        Self::embed(layout, Factor::Spin, &pauli('x'))
    }

    pub fn sigma_y(layout: &HilbertLayout) -> Result<Self> {
        Self::embed(layout, Factor::Spin, &pauli('y'))
    }

    pub fn sigma_z(layout: &HilbertLayout) -> Result<Self> {
        Self::embed(layout, Factor::Spin, &pauli('z'))
    }

    /// σ⁺ = |↑⟩⟨↓|.
    pub fn sigma_plus(layout: &HilbertLayout) -> Result<Self> {
        Self::embed(layout, Factor::Spin, &pauli('+'))
    }

    /// σ⁻ = |↓⟩⟨↑|.
    pub fn sigma_minus(layout: &HilbertLayout) -> Result<Self> {
        Self::embed(layout, Factor::Spin, &pauli('-'))
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn same_layout(&self, other: &Operator) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    pub fn adjoint(&self) -> Self {
        Self { layout: self.layout.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { layout: self.layout.clone(), matrix: &self.matrix * c }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        self.same_layout(other)?;
        Ok(Self { layout: self.layout.clone(), matrix: &self.matrix + &other.matrix })
    }

    pub fn sub(&self, other: &Operator) -> Result<Self> {
        self.same_layout(other)?;
        Ok(Self { layout: self.layout.clone(), matrix: &self.matrix - &other.matrix })
    }

    pub fn mul(&self, other: &Operator) -> Result<Self> {
        self.same_layout(other)?;
        Ok(Self { layout: self.layout.clone(), matrix: &self.matrix * &other.matrix })
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Operator) -> Result<Self> {
        self.same_layout(other)?;
        let ab = &self.matrix * &other.matrix;
        let ba = &other.matrix * &self.matrix;
        Ok(Self { layout: self.layout.clone(), matrix: ab - ba })
    }

    /// Largest `|A − A†|` element.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// Largest absolute element.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    /// Dumps to the JSON debug format: dimension, layout, row-major `[re, im]` pairs.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(OperatorDump::from(self)).expect("operator dump serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let dump: OperatorDump = serde_json::from_value(value.clone())?;
        dump.try_into()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct OperatorDump {
    dimension: usize,
    layout: HilbertLayout,
    data: Vec<[f64; 2]>,
}

impl From<&Operator> for OperatorDump {
    fn from(op: &Operator) -> Self {
        let d = op.dim();
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let z = op.matrix[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        Self { dimension: d, layout: op.layout.clone(), data }
    }
}

impl TryFrom<OperatorDump> for Operator {
    type Error = Error;

    fn try_from(dump: OperatorDump) -> Result<Self> {
        let d = dump.dimension;
        if dump.layout.dim() != d || dump.data.len() != d * d {
            return Err(Error::DimensionMismatch { expected: dump.layout.dim(), got: d });
        }
        let m = DMatrix::from_row_iterator(d, d, dump.data.iter().map(|p| C64::new(p[0], p[1])));
        Operator::new(dump.layout, m)
    }
}

/// Annihilation operator `a` of `mode_index`, identity on the other factors.
pub fn mode_op(layout: &HilbertLayout, mode_index: usize) -> Result<Operator> {
    Operator::annihilation(layout, mode_index)
}

/// Displacement `exp(α a† − α* a)` on one mode, by Padé scaling-and-squaring.
///
/// Requires `|α|² ≤ N_c/4` so the truncated exponential stays faithful on
/// the low-lying Fock states.
pub fn displacement_op(layout: &HilbertLayout, mode_index: usize, alpha: C64) -> Result<Operator> {
    let cut = layout.mode_cutoff(mode_index)?;
    let limit = cut as f64 / 4.0;
    if alpha.norm_sqr() > limit {
        return Err(Error::DisplacementTooLarge { alpha_sq: alpha.norm_sqr(), limit });
    }
    let a = local_annihilation(cut);
    let generator = a.adjoint() * alpha - &a * alpha.conj();
    Operator::embed(layout, Factor::Mode(mode_index), &generator.exp())
}
