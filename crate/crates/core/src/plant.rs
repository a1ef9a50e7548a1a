//! Plant and controller models, the uniform quantizer, the quantization-error
//! nonlinearity with its sector bounds, closed-loop assembly and simulation.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} has non-finite entries")))
    }
}

fn dim_err(left: &'static str, right: &'static str, detail: String) -> Error {
    Error::Dimension { left, right, detail }
}

/// `x_p⁺ = A_p x_p + B_p q(u_p)`, `y_p = C_p x_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(dim_err(
                "A_p",
                "A_p",
                format!("A_p must be square and nonempty, got {:?}", a.shape()),
            ));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(dim_err(
                "B_p",
                "A_p",
                format!("B_p has {} rows, expected {}", b.nrows(), a.nrows()),
            ));
        }
        if c.ncols() != a.nrows() || c.nrows() == 0 {
            return Err(dim_err(
                "C_p",
                "A_p",
                format!("C_p has {} columns, expected {}", c.ncols(), a.nrows()),
            ));
        }
        check_finite("A_p", &a)?;
        check_finite("B_p", &b)?;
        check_finite("C_p", &c)?;
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// `x_c⁺ = A_c x_c + B_c u_c + v`, `y_c = C_c x_c + D_c u_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl ControllerModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(dim_err(
                "A_c",
                "A_c",
                format!("A_c must be square and nonempty, got {:?}", a.shape()),
            ));
        }
        let nc = a.nrows();
        if b.nrows() != nc {
            return Err(dim_err(
                "B_c",
                "A_c",
                format!("B_c has {} rows, expected {nc}", b.nrows()),
            ));
        }
        if c.ncols() != nc {
            return Err(dim_err(
                "C_c",
                "A_c",
                format!("C_c has {} columns, expected {nc}", c.ncols()),
            ));
        }
        if d.shape() != (c.nrows(), b.ncols()) {
            return Err(dim_err(
                "D_c",
                "C_c/B_c",
                format!("D_c is {:?}, expected {:?}", d.shape(), (c.nrows(), b.ncols())),
            ));
        }
        check_finite("A_c", &a)?;
        check_finite("B_c", &b)?;
        check_finite("C_c", &c)?;
        check_finite("D_c", &d)?;
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
}

/// Per-channel quantization steps Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    theta: Vec<f64>,
}

impl QuantizerSpec {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidSpec("at least one channel is required".into()));
        }
        if let Some((i, t)) = theta.iter().enumerate().find(|(_, t)| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "step {i} is {t}, must be finite and positive"
            )));
        }
        Ok(Self { theta })
    }

    pub fn uniform(theta: f64, channels: usize) -> Result<Self> {
        Self::new(vec![theta; channels])
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn channels(&self) -> usize {
        self.theta.len()
    }

    pub fn theta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta)
    }
}

/// Scalar uniform quantizer `θ·Sign(u)·⌊|u|/θ⌋` with `Sign(0) = 1`.
///
/// The level is the floor of the floating-point quotient, corrected by one in
/// either direction so that `θ·level` (as computed) is the largest grid value
/// not above `|u|`. This keeps `|q| ≤ |u|` and makes `q` idempotent.
pub fn quantize_scalar(u: f64, theta: f64) -> f64 {
    let sign = if u >= 0.0 { 1.0 } else { -1.0 };
    let mag = u.abs();
    let mut level = (mag / theta).floor();
    if level > 0.0 && level * theta > mag {
        level -= 1.0;
    } else if (level + 1.0) * theta <= mag {
        level += 1.0;
    }
    theta * sign * level
}

fn check_len(u: &DVector<f64>, spec: &QuantizerSpec) -> Result<()> {
    if u.len() != spec.channels() {
        return Err(dim_err(
            "u",
            "theta",
            format!("u has {} entries, quantizer has {} channels", u.len(), spec.channels()),
        ));
    }
    Ok(())
}

/// Channel-wise uniform quantizer `q_Θ(u)`.
pub fn quantize(u: &DVector<f64>, spec: &QuantizerSpec) -> Result<DVector<f64>> {
    check_len(u, spec)?;
    Ok(DVector::from_iterator(
        u.len(),
        u.iter().zip(spec.theta()).map(|(&v, &t)| quantize_scalar(v, t)),
    ))
}

/// Quantization error `ψ_Θ(u) = q_Θ(u) − u`.
pub fn psi(u: &DVector<f64>, spec: &QuantizerSpec) -> Result<DVector<f64>> {
    Ok(quantize(u, spec)? - u)
}

fn diag_entries(name: &str, s: &DMatrix<f64>, n: usize) -> Result<Vec<f64>> {
    if s.shape() != (n, n) {
        return Err(Error::InvalidMultiplier(format!(
            "{name} is {:?}, expected {n}x{n}",
            s.shape()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && s[(i, j)] != 0.0 {
                return Err(Error::InvalidMultiplier(format!("{name} is not diagonal at ({i},{j})")));
            }
        }
    }
    let d: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    if let Some((i, v)) = d.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::InvalidMultiplier(format!("{name}[{i},{i}] = {v} is negative")));
    }
    Ok(d)
}

/// The two sector residuals `(ψᵀS₁ψ − ΘᵀS₁Θ, ψᵀS₂(ψ + u))`; both are ≤ 0 for every `u`.
pub fn sector_residuals(
    u: &DVector<f64>,
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    spec: &QuantizerSpec,
) -> Result<(f64, f64)> {
    let n = spec.channels();
    let d1 = diag_entries("S1", s1, n)?;
    let d2 = diag_entries("S2", s2, n)?;
    let p = psi(u, spec)?;
    let theta = spec.theta();
    let mut energy = 0.0;
    let mut bound = 0.0;
    let mut sector = 0.0;
    for i in 0..n {
        energy += d1[i] * p[i] * p[i];
        bound += d1[i] * theta[i] * theta[i];
        sector += d2[i] * p[i] * (p[i] + u[i]);
    }
    Ok((energy - bound, sector))
}

/// Closed loop `x⁺ = A_CL x + (B_CL + R E) ψ_Θ(H x)` on `x = (x_p, x_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    a_cl: DMatrix<f64>,
    b_cl: DMatrix<f64>,
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    quantizer: QuantizerSpec,
    n_p: usize,
}

/// Interconnect plant and controller with `u_c = y_p`, `u_p = y_c`.
pub fn assemble_closed_loop(
    plant: &PlantModel,
    controller: &ControllerModel,
    spec: &QuantizerSpec,
) -> Result<ClosedLoop> {
    let (np, nu, ny) = (plant.n_states(), plant.n_inputs(), plant.n_outputs());
    let nc = controller.n_states();
    if controller.b().ncols() != ny {
        return Err(dim_err(
            "B_c",
            "C_p",
            format!(
                "B_c has {} columns but the plant has {ny} outputs",
                controller.b().ncols()
            ),
        ));
    }
    if controller.c().nrows() != nu {
        return Err(dim_err(
            "C_c",
            "B_p",
            format!("C_c has {} rows but the plant has {nu} inputs", controller.c().nrows()),
        ));
    }
    if spec.channels() != nu {
        return Err(dim_err(
            "theta",
            "B_p",
            format!(
                "quantizer has {} channels but the plant has {nu} inputs",
                spec.channels()
            ),
        ));
    }
    let (ap, bp, cp) = (plant.a(), plant.b(), plant.c());
    let (ac, bc, cc, dc) = (controller.a(), controller.b(), controller.c(), controller.d());
    let n = np + nc;

    let mut a_cl = DMatrix::zeros(n, n);
    a_cl.view_mut((0, 0), (np, np)).copy_from(&(ap + bp * dc * cp));
    a_cl.view_mut((0, np), (np, nc)).copy_from(&(bp * cc));
    a_cl.view_mut((np, 0), (nc, np)).copy_from(&(bc * cp));
    a_cl.view_mut((np, np), (nc, nc)).copy_from(ac);

    let mut b_cl = DMatrix::zeros(n, nu);
    b_cl.view_mut((0, 0), (np, nu)).copy_from(bp);

    let mut h = DMatrix::zeros(nu, n);
    h.view_mut((0, 0), (nu, np)).copy_from(&(dc * cp));
    h.view_mut((0, np), (nu, nc)).copy_from(cc);

    let mut r = DMatrix::zeros(n, nc);
    r.view_mut((np, 0), (nc, nc)).fill_with_identity();

    Ok(ClosedLoop {
        a_cl,
        b_cl,
        h,
        r,
        quantizer: spec.clone(),
        n_p: np,
    })
}

impl ClosedLoop {
    pub fn a_cl(&self) -> &DMatrix<f64> {
        &self.a_cl
    }
    pub fn b_cl(&self) -> &DMatrix<f64> {
        &self.b_cl
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn quantizer(&self) -> &QuantizerSpec {
        &self.quantizer
    }
    /// `n_p + n_c`
    pub fn n_states(&self) -> usize {
        self.a_cl.nrows()
    }
    pub fn n_plant(&self) -> usize {
        self.n_p
    }
    pub fn n_controller(&self) -> usize {
        self.r.ncols()
    }
    pub fn n_inputs(&self) -> usize {
        self.b_cl.ncols()
    }

    /// Same loop with a different quantizer (channel count must match).
    pub fn with_quantizer(&self, spec: QuantizerSpec) -> Result<Self> {
        if spec.channels() != self.n_inputs() {
            return Err(dim_err(
                "theta",
                "B_CL",
                format!("{} channels for {} inputs", spec.channels(), self.n_inputs()),
            ));
        }
        Ok(Self {
            quantizer: spec,
            ..self.clone()
        })
    }

    /// `B_CL + R E`
    pub fn input_matrix(&self, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_gain(e)?;
        Ok(&self.b_cl + &self.r * e)
    }

    pub fn check_gain(&self, e: &DMatrix<f64>) -> Result<()> {
        if e.shape() != (self.n_controller(), self.n_inputs()) {
            return Err(dim_err(
                "E",
                "closed loop",
                format!(
                    "E is {:?}, expected {:?}",
                    e.shape(),
                    (self.n_controller(), self.n_inputs())
                ),
            ));
        }
        Ok(())
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_states() {
            return Err(dim_err(
                "x",
                "A_CL",
                format!("state has {} entries, expected {}", x.len(), self.n_states()),
            ));
        }
        Ok(())
    }
}

/// One exact step of the closed loop; with `compensation_on == false` the gain is treated as zero.
pub fn step(cl: &ClosedLoop, e: &DMatrix<f64>, x: &DVector<f64>, compensation_on: bool) -> Result<DVector<f64>> {
    cl.check_gain(e)?;
    cl.check_state(x)?;
    let err = psi(&(&cl.h * x), &cl.quantizer)?;
    let mut next = &cl.a_cl * x + &cl.b_cl * &err;
    if compensation_on {
        next += &cl.r * (e * &err);
    }
    Ok(next)
}

/// Dense record of a simulated run. Entry `j` of every sequence refers to step `j`;
/// `compensation_active[j]` is the flag used for the transition out of step `j`
/// (the last entry repeats the final flag, `false` for an empty schedule).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs_raw: Vec<DVector<f64>>,
    pub inputs_quantized: Vec<DVector<f64>>,
    pub compensation_active: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Plant part `x_p` of every state.
    pub fn plant_states(&self, n_p: usize) -> Vec<DVector<f64>> {
        self.states.iter().map(|x| x.rows(0, n_p).into_owned()).collect()
    }

    /// CSV with header `j,x_1..,u_raw_1..,u_q_1..,comp_active`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, DVector::len);
        let m = self.inputs_raw.first().map_or(0, DVector::len);
        let mut header = vec!["j".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_raw_{i}")));
        header.extend((1..=m).map(|i| format!("u_q_{i}")));
        header.push("comp_active".into());
        writeln!(w, "{}", header.join(","))?;
        for j in 0..self.len() {
            let mut row = vec![j.to_string()];
            row.extend(self.states[j].iter().map(f64::to_string));
            row.extend(self.inputs_raw[j].iter().map(f64::to_string));
            row.extend(self.inputs_quantized[j].iter().map(f64::to_string));
            row.push(if self.compensation_active[j] { "1" } else { "0" }.into());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Iterate [`step`] for `horizon` steps with the given per-step compensation flags.
pub fn simulate(
    cl: &ClosedLoop,
    e: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: usize,
    schedule: &[bool],
) -> Result<Trajectory> {
    if schedule.len() != horizon {
        return Err(Error::InvalidConfig(format!(
            "schedule has {} flags for a horizon of {horizon}",
            schedule.len()
        )));
    }
    cl.check_gain(e)?;
    cl.check_state(x0)?;
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        inputs_raw: Vec::with_capacity(horizon + 1),
        inputs_quantized: Vec::with_capacity(horizon + 1),
        compensation_active: Vec::with_capacity(horizon + 1),
    };
    let mut x = x0.clone();
    for j in 0..=horizon {
        let u = &cl.h * &x;
        traj.inputs_quantized.push(quantize(&u, &cl.quantizer)?);
        traj.inputs_raw.push(u);
        let flag = schedule.get(j).or(schedule.last()).copied().unwrap_or(false);
        traj.compensation_active.push(flag);
        traj.states.push(x.clone());
        if j < horizon {
            x = step(cl, e, &x, schedule[j])?;
        }
    }
    Ok(traj)
}
