//! Coupled thermal and poroelastic forward model and its quantities of interest.

pub mod mechanical;
mod system;
pub mod thermal;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fem::{self, NodalField};
use crate::mesh::{BoundaryTag, Mesh};

pub use mechanical::MechanicalDofs;
pub use system::ParametricSystem;

/// Porosity at design-plus-perturbation zero.
pub const PHI_MIN: f64 = 0.1;
/// `φ_f(1) − φ_f(0)` of the linear design map.
pub const PHI_SPAN: f64 = 0.8;
/// Open interval that every nodal porosity must stay in.
pub const POROSITY_BOUNDS: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kappa_s: f64,
    pub kappa_f: f64,
    pub h_exchange: f64,
    pub c_compress: f64,
    pub mu: f64,
    pub k_bulk: f64,
    pub t_hot: f64,
    pub t_cold: f64,
    pub conv_coeff: f64,
    pub traction: [f64; 2],
    pub beta_m: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            kappa_s: 2.0,
            kappa_f: 0.06,
            h_exchange: 10.0,
            c_compress: 1e-6,
            mu: 1e6,
            k_bulk: 2e6,
            t_hot: 300.0,
            t_cold: 270.0,
            conv_coeff: 15.0,
            traction: [0.0, -1e3],
            beta_m: 1.0,
        }
    }
}

impl ModelParams {
    /// Plane-strain Lamé parameter `λ = K − μ`.
    pub fn lambda(&self) -> f64 {
        self.k_bulk - self.mu
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa_s", self.kappa_s),
            ("kappa_f", self.kappa_f),
            ("h_exchange", self.h_exchange),
            ("C_compress", self.c_compress),
            ("mu", self.mu),
            ("K_bulk", self.k_bulk),
            ("conv_coeff", self.conv_coeff),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Argument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let finite = [self.t_hot, self.t_cold, self.traction[0], self.traction[1], self.beta_m];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("temperatures, traction and beta_M must be finite".into()));
        }
        // The pressure coupling lowers the effective bulk modulus by (2φ − 1)/C.
        let worst = 2.0 * POROSITY_BOUNDS.1 - 1.0;
        if self.k_bulk - worst / self.c_compress <= 0.0 {
            return Err(Error::Argument(format!(
                "K_bulk − {worst}/C_compress must be positive for a well-posed mechanical problem \
                 (K_bulk = {}, C_compress = {})",
                self.k_bulk, self.c_compress
            )));
        }
        Ok(())
    }
}

/// Nodal fluid volume fraction, strictly inside [`POROSITY_BOUNDS`].
#[derive(Debug, Clone, PartialEq)]
pub struct PorosityField {
    phi_f: NodalField,
}

impl PorosityField {
    pub fn new(phi_f: NodalField) -> Result<Self> {
        let (lo, hi) = POROSITY_BOUNDS;
        let worst = phi_f
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| (i, v, (lo - v).max(v - hi)))
            .max_by(|a, b| a.2.total_cmp(&b.2));
        if let Some((node, value, excess)) = worst {
            if excess >= 0.0 {
                return Err(Error::PorosityRange {
                    node,
                    value,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { phi_f })
    }

    pub fn phi_f(&self) -> &NodalField {
        &self.phi_f
    }

    pub fn phi_s(&self) -> NodalField {
        self.phi_f.map(|v| 1.0 - v)
    }

    pub fn values(&self) -> &DVector<f64> {
        self.phi_f.values()
    }
}

/// `φ_f = 0.1 + 0.8 (d + m)`.
pub fn porosity_map(d: &NodalField, m: &NodalField) -> Result<PorosityField> {
    if d.len() != m.len() {
        return Err(Error::Argument(format!("design has {} nodes, perturbation {}", d.len(), m.len())));
    }
    if let Some((i, v)) = d.values().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Argument(format!("design value {v} at node {i} is outside [0, 1]")));
    }
    let phi = (d.values() + m.values()).map(|s| PHI_MIN + PHI_SPAN * s);
    PorosityField::new(NodalField::from_values_unchecked(phi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalState {
    pub t_s: NodalField,
    pub t_f: NodalField,
    raw: DVector<f64>,
}

impl ThermalState {
    /// Solution vector `[T_s; T_f]` of the thermal system.
    pub fn vector(&self) -> &DVector<f64> {
        &self.raw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanicalState {
    pub u: [NodalField; 2],
    pub p: NodalField,
    raw: DVector<f64>,
}

impl MechanicalState {
    /// Solution vector of the mechanical system (see [`MechanicalDofs`]).
    pub fn vector(&self) -> &DVector<f64> {
        &self.raw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub thermal: ThermalState,
    pub mechanical: MechanicalState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QoiBreakdown {
    pub q_t: f64,
    pub q_m: f64,
    pub q: f64,
}

/// Mesh, parameters and the affine system templates. Immutable once built.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    mesh: Mesh,
    params: ModelParams,
    thermal: ParametricSystem,
    mechanical: ParametricSystem,
    mech_dofs: MechanicalDofs,
}

impl ForwardModel {
    /// Clamp the inner boundary and load the outer one.
    pub fn new(mesh: Mesh, params: ModelParams) -> Result<Self> {
        let clamped = mesh.boundary_nodes(BoundaryTag::Inner);
        Self::with_clamped(mesh, params, &clamped)
    }

    pub fn with_clamped(mesh: Mesh, params: ModelParams, clamped: &[usize]) -> Result<Self> {
        params.validate()?;
        let thermal = thermal::build_system(&mesh, &params);
        let (mechanical, mech_dofs) = mechanical::build_system(&mesh, &params, clamped)?;
        Ok(Self {
            mesh,
            params,
            thermal,
            mechanical,
            mech_dofs,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn thermal_system(&self) -> &ParametricSystem {
        &self.thermal
    }

    pub fn mechanical_system(&self) -> &ParametricSystem {
        &self.mechanical
    }

    pub fn mechanical_dofs(&self) -> &MechanicalDofs {
        &self.mech_dofs
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn porosity(&self, d: &NodalField, m: &NodalField) -> Result<PorosityField> {
        if d.len() != self.n_nodes() {
            return Err(Error::Argument("design does not match the mesh".into()));
        }
        porosity_map(d, m)
    }

    pub fn thermal_state(&self, x: DVector<f64>) -> ThermalState {
        let n = self.n_nodes();
        ThermalState {
            t_s: NodalField::from_values_unchecked(x.rows(0, n).into_owned()),
            t_f: NodalField::from_values_unchecked(x.rows(n, n).into_owned()),
            raw: x,
        }
    }

    pub fn mechanical_state(&self, x: DVector<f64>) -> MechanicalState {
        let [ux, uy, pi] = self.mech_dofs.scatter(&x);
        let inv_c = 1.0 / self.params.c_compress;
        MechanicalState {
            u: [
                NodalField::from_values_unchecked(DVector::from_vec(ux)),
                NodalField::from_values_unchecked(DVector::from_vec(uy)),
            ],
            p: NodalField::from_values_unchecked(DVector::from_iterator(pi.len(), pi.iter().map(|v| v * inv_c))),
            raw: x,
        }
    }

    pub fn solve_thermal(&self, phi: &PorosityField) -> Result<ThermalState> {
        Ok(self.thermal_state(self.thermal.solve(phi.values())?))
    }

    pub fn solve_mechanical(&self, phi: &PorosityField) -> Result<MechanicalState> {
        Ok(self.mechanical_state(self.mechanical.solve(phi.values())?))
    }

    pub fn solve(&self, phi: &PorosityField) -> Result<ForwardState> {
        let (thermal, mechanical) = rayon::join(|| self.solve_thermal(phi), || self.solve_mechanical(phi));
        Ok(ForwardState {
            thermal: thermal?,
            mechanical: mechanical?,
        })
    }

    pub fn eval_qt(&self, state: &ThermalState, phi: &PorosityField) -> f64 {
        self.thermal.qoi(phi.values(), &state.raw)
    }

    /// Interior part of `Q_T`: `½ Σᵢ ⟨φᵢ κᵢ ∇Tᵢ, ∇Tᵢ⟩`.
    pub fn thermal_interior_energy(&self, state: &ThermalState, phi: &PorosityField) -> Result<f64> {
        let p = &self.params;
        let mut energy = 0.0;
        for (t, coeff) in [
            (&state.t_s, phi.phi_s().map(|v| v * p.kappa_s)),
            (&state.t_f, phi.phi_f().map(|v| v * p.kappa_f)),
        ] {
            let k = fem::assemble_weighted_stiffness(&self.mesh, &coeff, None)?;
            energy += 0.5 * k.bilinear(t.values(), t.values());
        }
        Ok(energy)
    }

    pub fn eval_qm(&self, state: &MechanicalState) -> f64 {
        // the mechanical QoI forms do not depend on the porosity
        let zero = DVector::zeros(self.n_nodes());
        self.mechanical.qoi(&zero, &state.raw)
    }

    pub fn evaluate(&self, d: &NodalField, m: &NodalField) -> Result<QoiBreakdown> {
        let phi = self.porosity(d, m)?;
        let state = self.solve(&phi)?;
        let q_t = self.eval_qt(&state.thermal, &phi);
        let q_m = self.eval_qm(&state.mechanical);
        Ok(QoiBreakdown {
            q_t,
            q_m,
            q: self.params.beta_m * q_m - q_t,
        })
    }

    /// `Q = β_M Q_M − Q_T`.
    pub fn eval_q(&self, d: &NodalField, m: &NodalField) -> Result<f64> {
        Ok(self.evaluate(d, m)?.q)
    }
}
