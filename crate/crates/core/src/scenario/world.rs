//! The closed loop: plant, estimator, detector, projector, task controller
//! and both defenses, advanced one tick at a time.

use std::sync::Arc;

use nalgebra::{DVector, Vector3};
use serde::Serialize;

use crate::attacker::AttackerConfig;
use crate::config::RunConfig;
use crate::controller::{hierarchical_scale, resolve_redundancy, task_pd, ControllerGains, TaskJacobian};
use crate::damping::{final_control, headroom_clip, ideal_damping, Damping};
use crate::detector::{alarm, mahalanobis_chol, DetectorConfig};
use crate::error::{Error, Result};
use crate::estimator::{kalman_step, EstimatorGains, EstimatorState};
use crate::kinematics::{
    directional_manipulability, forward_kinematics, geometric_jacobian, jacobian_time_derivative, manip_cost,
    manip_cost_gradient, manip_cost_hessian, KinematicChain,
};
use crate::linalg::psd_sqrt;
use crate::manipulability::{
    consistency_error, estimate_direction, null_space_command, weight_matrix, weighted_pseudoinverse, ManipConfig,
};
use crate::plant::{measure, plant_step, positions, saturate, velocities, NoiseSource, PlantModel, PlantState};
use crate::projector::{covariance_recursion, project_step, residual, resync, ProjectorState, ResidualCovTable};
use crate::task::{ArcTask, Task};

use super::{ScenarioConfig, ScenarioFlags, ScenarioId, TaskKind};

/// Everything a run shares read-only across ticks, rollouts and seeds.
#[derive(Debug)]
pub struct Setup {
    pub id: Option<ScenarioId>,
    pub flags: ScenarioFlags,
    pub model: PlantModel,
    pub gains: EstimatorGains,
    pub table: ResidualCovTable,
    pub chain: KinematicChain,
    pub ctrl: ControllerGains,
    pub detector: DetectorConfig,
    pub damping: Damping,
    pub manip: ManipConfig,
    pub attacker: AttackerConfig,
    pub nominal: Task,
    pub attacker_task: Option<Task>,
    pub q_init: DVector<f64>,
    pub horizon: usize,
    pub resync_interval: Option<usize>,
}

impl Setup {
    pub fn build(cfg: &RunConfig, scenario: &ScenarioConfig) -> Result<Arc<Self>> {
        if scenario.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least one step".into()));
        }
        let model = PlantModel::double_integrator(&cfg.plant)?;
        let n = model.n;
        let dof = model.meas_dim() as u32;
        let gains = EstimatorGains::for_plant(&model)?;
        let resync_interval = cfg.scenario.resync_interval;
        if resync_interval == Some(0) {
            return Err(Error::InvalidParameter("resync_interval must be positive".into()));
        }
        let k_max = resync_interval.unwrap_or(scenario.horizon).max(1);
        let table = covariance_recursion(&gains, &model, k_max)?;
        let chain = KinematicChain::from_config(&cfg.chain)?;
        if chain.dof() != n {
            return Err(Error::InvalidParameter(format!(
                "chain has {} joints, plant has {n}",
                chain.dof()
            )));
        }
        let ctrl = ControllerGains::from_lqr(model.ts, &cfg.controller.lqr, cfg.controller.c_w)?;
        let detector = cfg.detector.resolve(dof)?;
        let damping = Damping::new(&cfg.damping, dof)?;
        cfg.manip.validate(n)?;
        cfg.attacker.validate()?;
        if cfg.scenario.q_init.len() != n {
            return Err(Error::InvalidParameter(
                "q_init length must equal the joint count".into(),
            ));
        }
        let q_init = DVector::from_column_slice(&cfg.scenario.q_init);
        let home = forward_kinematics(&chain, &q_init);
        let duration = scenario.horizon as f64 * model.ts;
        let make = |kind: TaskKind| -> Result<Task> {
            Ok(match kind {
                TaskKind::Still => Task::Still {
                    p: home.p,
                    rot: home.rot,
                },
                TaskKind::Circle => Task::Arc(ArcTask::new(
                    home.p,
                    Vector3::from_column_slice(&cfg.scenario.circle_end),
                    duration,
                    home.rot,
                )?),
            })
        };
        let nominal = make(scenario.flags.nominal)?;
        let attacker_task = scenario.flags.attacker.map(make).transpose()?;
        Ok(Arc::new(Self {
            id: scenario.id,
            flags: scenario.flags,
            model,
            gains,
            table,
            chain,
            ctrl,
            detector,
            damping,
            manip: cfg.manip.clone(),
            attacker: cfg.attacker.clone(),
            nominal,
            attacker_task,
            q_init,
            horizon: scenario.horizon,
            resync_interval,
        }))
    }
}

/// True hand position, velocity and finite-difference acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandState {
    pub p: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
}

/// Attack bookkeeping attached to a step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AttackInfo {
    pub attack_norm: f64,
    pub delta_norm: f64,
    pub lambda: f64,
    pub fallback: bool,
    pub modeled_z: f64,
}

/// Everything observed at tick `k` before the plant advances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qd_tilde: Vec<f64>,
    pub u: Vec<f64>,
    pub u_d: Vec<f64>,
    pub u_nom_sat: Vec<f64>,
    pub p: [f64; 3],
    pub hand_vel: [f64; 3],
    pub hand_acc: [f64; 3],
    pub p_ref: [f64; 3],
    pub p_ref_attacker: Option<[f64; 3]>,
    pub z: f64,
    pub alarm: bool,
    pub z_tilde: f64,
    pub phi: f64,
    pub w: f64,
    pub cost: f64,
    pub grad_norm: f64,
    pub nu: f64,
    pub jstar_error: f64,
    pub null_purity: f64,
    /// `Σ_j |Sat{u_nom}_j q̇̃_j|`
    pub sum_abs_pnom: f64,
    /// `Σ_j |u_d_j q̇̃_j|`
    pub sum_abs_damping_power: f64,
    /// `max_j u_d_j q̇̃_j`
    pub max_damping_power: f64,
    /// `Σ_j |u_j q̇_j|`
    pub p_tot: f64,
    /// `q̇ᵀ u_d`
    pub defense_power: f64,
    pub kinetic_energy: f64,
    pub attack: AttackInfo,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Complete closed-loop state. Cloning gives an independent snapshot.
#[derive(Debug, Clone)]
pub struct World {
    setup: Arc<Setup>,
    pub k: usize,
    pub plant: PlantState,
    pub est: EstimatorState,
    pub proj: ProjectorState,
    last_attack: DVector<f64>,
    prev_hand_vel: Vector3<f64>,
    pending_y: Option<DVector<f64>>,
}

impl World {
    /// Arm at rest at `q_init`, estimate `x̂₀`, projector synced to it.
    pub fn new(setup: Arc<Setup>, x_hat0: DVector<f64>) -> Self {
        let plant = PlantState::at_rest(&setup.q_init);
        let est = EstimatorState::new(x_hat0, setup.model.meas_dim());
        let proj = resync(&est);
        let mut w = Self {
            last_attack: DVector::zeros(setup.model.meas_dim()),
            setup,
            k: 0,
            plant,
            est,
            proj,
            prev_hand_vel: Vector3::zeros(),
            pending_y: None,
        };
        w.prev_hand_vel = w.hand_velocity();
        w
    }

    /// Initial estimate drawn from the steady-state error covariance.
    pub fn with_noise(setup: Arc<Setup>, noise: &mut NoiseSource) -> Self {
        let x0 = PlantState::at_rest(&setup.q_init).x;
        let e0 = noise.gaussian(&psd_sqrt(&setup.gains.p));
        Self::new(setup, x0 - e0)
    }

    pub fn setup(&self) -> &Arc<Setup> {
        &self.setup
    }

    pub fn last_attack(&self) -> &DVector<f64> {
        &self.last_attack
    }

    pub fn pending_measurement(&self) -> Option<&DVector<f64>> {
        self.pending_y.as_ref()
    }

    /// Sample `y_k = C x_k + v_k`; held until the next `advance`.
    pub fn observe(&mut self, v: Option<&DVector<f64>>) -> Result<&DVector<f64>> {
        let y = measure(
            &self.plant,
            &DVector::zeros(self.setup.model.meas_dim()),
            &self.setup.model,
            v,
        )?;
        Ok(self.pending_y.insert(y))
    }

    fn hand_velocity(&self) -> Vector3<f64> {
        let jp = geometric_jacobian(&self.setup.chain, &self.plant.q())
            .rows(0, 3)
            .into_owned();
        let v = jp * self.plant.qd();
        Vector3::new(v[0], v[1], v[2])
    }

    pub fn hand_state(&self) -> HandState {
        let p = forward_kinematics(&self.setup.chain, &self.plant.q()).p;
        let vel = self.hand_velocity();
        HandState {
            p,
            vel,
            acc: (vel - self.prev_hand_vel) / self.setup.model.ts,
        }
    }

    /// One tick with sensor attack `attack` and process noise `w`.
    pub fn advance(&mut self, attack: &DVector<f64>, w: Option<&DVector<f64>>) -> Result<StepRecord> {
        let k = self.k;
        self.tick(attack, w).map_err(|e| e.at_step(k))
    }

    fn tick(&mut self, attack: &DVector<f64>, w_noise: Option<&DVector<f64>>) -> Result<StepRecord> {
        let setup = Arc::clone(&self.setup);
        let s = &*setup;
        let model = &s.model;
        let chain = &s.chain;
        let n = model.n;
        let t = self.k as f64 * model.ts;
        let y = match self.pending_y.take() {
            Some(y) => y,
            None => measure(&self.plant, &DVector::zeros(model.meas_dim()), model, None)?,
        };
        if attack.len() != model.meas_dim() || attack.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("attack vector"));
        }

        // detector
        let y_tilde = &y + attack;
        let innovation = &y_tilde - &model.c * &self.est.x_hat;
        let z = mahalanobis_chol(&innovation, &s.gains.sigma_chol);
        let alarmed = s.flags.chi2_on && alarm(z, &s.detector);

        // projected residual score
        let r_tilde = residual(&self.proj, &self.est);
        let z_tilde = if self.proj.k_since_resync == 0 {
            0.0
        } else {
            s.table.score(self.proj.k_since_resync, &r_tilde)?
        };

        // references and estimated hand
        let reference = s.nominal.reference(t);
        let q_hat = positions(&self.est.x_hat);
        let qd_hat = velocities(&self.est.x_hat);
        let pose_hat = forward_kinematics(chain, &q_hat);
        let j_full = geometric_jacobian(chain, &q_hat);
        let rows = reference.rows();
        let task = TaskJacobian::new(&j_full, rows)?;

        // manipulability, always logged; drives the secondary task when on
        let q_tilde = positions(&self.proj.x_tilde);
        let qd_tilde = velocities(&self.proj.x_tilde);
        let p_tilde = forward_kinematics(chain, &q_tilde).p;
        let dir = estimate_direction(&p_tilde, &reference.p, s.manip.direction_eps);
        let w_manip = directional_manipulability(chain, &q_tilde, &dir.d);
        let cost = 0.5 * w_manip * w_manip;
        let (u_sec, j_star, grad_norm, nu) = if s.flags.mr_on {
            let grad = manip_cost_gradient(chain, &q_tilde, &dir.d);
            let grad_norm = grad.norm();
            let step = null_space_command(&q_tilde, &task, &grad, |q| manip_cost(chain, q, &dir.d), &s.manip);
            let needs_hessian = crate::manipulability::hessian_weight(grad_norm, &s.manip) > 0.0;
            let hess = needs_hessian.then(|| manip_cost_hessian(chain, &q_tilde, &dir.d));
            let weight = weight_matrix(&s.manip, hess.as_ref(), grad_norm)?;
            let j_star = weighted_pseudoinverse(&task.j, &weight)?;
            (step.u_sec, j_star, grad_norm, step.nu)
        } else {
            (DVector::zeros(n), task.pinv.clone(), 0.0, 0.0)
        };
        let jstar_error = consistency_error(&task.j, &j_star);
        let sec_norm = u_sec.norm();
        let null_purity = if sec_norm > 0.0 {
            (&task.j * &u_sec).norm() / sec_norm
        } else {
            0.0
        };

        // task controller
        let twist = &j_full * &qd_hat;
        let u_pd = task_pd(&reference, &pose_hat, &twist, &s.ctrl);
        let jdot_qdot = (jacobian_time_derivative(chain, &q_hat, &qd_hat) * &qd_hat)
            .rows(0, rows)
            .into_owned();
        let zero_sec = DVector::zeros(n);
        let primary = resolve_redundancy(&u_pd, &jdot_qdot, &qd_hat, &j_star, &task, &zero_sec, s.ctrl.c_w)?;
        let u_nom = if s.flags.mr_on {
            // u_sec ∈ null(Ĵ) was verified above through the purity ratio
            if null_purity > 1e-8 {
                return Err(Error::NotInNullSpace {
                    residual: null_purity * sec_norm,
                });
            }
            hierarchical_scale(&primary, &u_sec, &model.u_min, &model.u_max, s.manip.quota)
        } else {
            primary
        };
        let u_nom_sat = saturate(&u_nom, &model.u_min, &model.u_max)?;

        // virtual damping
        let (phi, u_d) = if s.flags.vd_on {
            let phi = s.damping.phi(z_tilde);
            let ideal = ideal_damping(&u_nom_sat, &qd_tilde, phi, s.damping.eps_vel);
            (phi, headroom_clip(&ideal, &u_nom_sat, &model.u_min, &model.u_max))
        } else {
            (0.0, DVector::zeros(n))
        };
        let u = final_control(&u_nom_sat, &u_d, &model.u_min, &model.u_max)?;

        // logging quantities at k
        let hand = self.hand_state();
        let qd = self.plant.qd();
        let mut sum_abs_pnom = 0.0;
        let mut sum_abs_damping_power = 0.0;
        let mut max_damping_power = f64::NEG_INFINITY;
        for j in 0..n {
            sum_abs_pnom += (u_nom_sat[j] * qd_tilde[j]).abs();
            let pd = u_d[j] * qd_tilde[j];
            sum_abs_damping_power += pd.abs();
            max_damping_power = max_damping_power.max(pd);
        }
        let p_tot = u.iter().zip(qd.iter()).map(|(a, b)| (a * b).abs()).sum();
        let record = StepRecord {
            k: self.k,
            q: self.plant.q().as_slice().to_vec(),
            qd: qd.as_slice().to_vec(),
            qd_tilde: qd_tilde.as_slice().to_vec(),
            u: u.as_slice().to_vec(),
            u_d: u_d.as_slice().to_vec(),
            u_nom_sat: u_nom_sat.as_slice().to_vec(),
            p: arr(&hand.p),
            hand_vel: arr(&hand.vel),
            hand_acc: arr(&hand.acc),
            p_ref: arr(&reference.p),
            p_ref_attacker: s.attacker_task.as_ref().map(|tk| arr(&tk.reference(t).p)),
            z,
            alarm: alarmed,
            z_tilde,
            phi,
            w: w_manip,
            cost,
            grad_norm,
            nu,
            jstar_error,
            null_purity,
            sum_abs_pnom,
            sum_abs_damping_power,
            max_damping_power,
            p_tot,
            defense_power: qd.dot(&u_d),
            kinetic_energy: 0.5 * qd.norm_squared(),
            attack: AttackInfo {
                attack_norm: attack.norm(),
                ..AttackInfo::default()
            },
        };

        // advance plant, estimator, projector with the applied command
        self.plant = plant_step(&self.plant, &u, model, w_noise)?;
        self.est = kalman_step(&self.est, &s.gains, &u, &y_tilde, model);
        self.proj = project_step(&self.proj, &u, model);
        if let Some(interval) = s.resync_interval {
            if self.proj.k_since_resync >= interval {
                self.proj = resync(&self.est);
            }
        }
        self.prev_hand_vel = hand.vel;
        self.last_attack = attack.clone();
        self.k += 1;
        Ok(record)
    }
}

/// A world plus its noise stream and attacker, stepped to the horizon.
#[derive(Debug)]
pub struct Simulation {
    pub world: World,
    noise: Option<NoiseSource>,
    /// Relative step-halving gap of the first sensitivity evaluation.
    pub richardson_gap: Option<f64>,
}

impl Simulation {
    /// Seeded run; the initial estimation error is drawn first.
    pub fn new(setup: Arc<Setup>, seed: u64) -> Self {
        let mut noise = NoiseSource::new(&setup.model, seed);
        let world = World::with_noise(setup, &mut noise);
        Self {
            world,
            noise: Some(noise),
            richardson_gap: None,
        }
    }

    /// Noise-free run starting from a perfect estimate.
    pub fn noise_free(setup: Arc<Setup>) -> Self {
        let x0 = PlantState::at_rest(&setup.q_init).x;
        Self {
            world: World::new(setup, x0),
            noise: None,
            richardson_gap: None,
        }
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let (w, v) = match self.noise.as_mut() {
            Some(n) => {
                let (w, v) = n.step_draws();
                (Some(w), Some(v))
            }
            None => (None, None),
        };
        let k = self.world.k;
        self.world.observe(v.as_ref())?;
        let setup = Arc::clone(self.world.setup());
        let (attack, info) = if setup.attacker_task.is_some() {
            if self.richardson_gap.is_none() && setup.attacker.richardson_check {
                let a_bar = crate::attacker::baseline(self.world.last_attack());
                let gap =
                    crate::attacker::richardson_gap(&self.world, &a_bar, &setup.attacker).map_err(|e| e.at_step(k))?;
                if gap > 0.01 {
                    log::warn!("sensitivity step-halving gap {gap:.3e} exceeds 1%");
                }
                self.richardson_gap = Some(gap);
            }
            let step = crate::attacker::synthesize_step(&self.world, &setup.attacker, &setup.gains, setup.detector.tau)
                .map_err(|e| e.at_step(k))?;
            let info = AttackInfo {
                attack_norm: step.attack.norm(),
                delta_norm: step.delta.norm(),
                lambda: step.lambda,
                fallback: step.fallback,
                modeled_z: step.modeled_z,
            };
            (step.attack, Some(info))
        } else {
            (DVector::zeros(setup.model.meas_dim()), None)
        };
        let mut rec = self.world.advance(&attack, w.as_ref())?;
        if let Some(info) = info {
            rec.attack = info;
        }
        Ok(rec)
    }

    /// Step to the horizon, handing each record to `sink`.
    pub fn run_with<F: FnMut(StepRecord)>(&mut self, mut sink: F) -> Result<()> {
        while self.world.k < self.world.setup().horizon {
            sink(self.step()?);
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<Vec<StepRecord>> {
        let mut out = Vec::with_capacity(self.world.setup().horizon);
        self.run_with(|r| out.push(r))?;
        Ok(out)
    }
}
