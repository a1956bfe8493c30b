//! Labeled synthetic trajectories of a motor-driven valve.
//!
//! The plant is a surface/interior PMSM in the rotor dq frame driving the
//! valve through a reduction gear:
//!
//! ```text
//! Ld did/dt = vd - R id + we Lq iq
//! Lq diq/dt = vq - R iq - we Ld id - we psi
//! Te        = 1.5 p (psi iq + (Ld - Lq) id iq)
//! J dw/dt   = Te - B w - Tc tanh(w / w_c) - TL - Tu sin(theta)
//! ```
//!
//! with `we = p w`. The controller is a cascade running at 1 kHz: a
//! rate-limited position reference, a proportional position loop with speed
//! feed-forward, a PI speed loop producing the torque reference, and PI
//! current loops with back-EMF decoupling. The controller is tuned on the
//! nominal parameter set, so anomalous parameters show up as tracking
//! errors, different current levels and rotor-synchronous ripple.
//!
//! Each of the nine physical inputs is a percentage scale factor applied to
//! a documented base value (see [`BASE`]); resistance uses 125 as its
//! reference point because its nominal range is centred there.
//!
//! Sensor channels carry additive white noise with a standard deviation of
//! 1% of the channel's nominal span; reference channels inherit that noise
//! through the feedback loops.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Sampling rate of every trajectory, in Hz.
pub const SAMPLE_RATE: f64 = 1000.0;

/// The 14 recorded channels, in storage order.
pub const CHANNEL_NAMES: [&str; 14] = [
    "Vd_Ref",
    "Vq_Ref",
    "Ws",
    "Iq_Ref",
    "Id_Meas",
    "Iq_Meas",
    "PosM_Set",
    "PosM_Ref",
    "PosM_Meas",
    "SpeedM_Ref",
    "SpeedM_Meas",
    "TqM_Ref",
    "PosV_Set",
    "PosV_Meas",
];

pub const N_CHANNELS: usize = CHANNEL_NAMES.len();

pub const TRAJECTORY_KIND: &str = "trajectory";
pub const TRAJECTORY_VERSION: u32 = 1;

/// Nominal spans used to size the sensor noise of the measured channels.
const SENSOR_SPAN: [(usize, f64); 5] = [
    (4, 1.0),   // Id_Meas [A]
    (5, 2.0),   // Iq_Meas [A]
    (8, 50.0),  // PosM_Meas [rad]
    (10, 300.0), // SpeedM_Meas [rad/s]
    (13, 95.0), // PosV_Meas [deg]
];
const NOISE_FRACTION: f64 = 0.01;

/// Base physical values that the percentage scale factors multiply.
pub struct BaseValues {
    pub pole_pairs: f64,
    pub flux: f64,
    pub inductance: f64,
    pub resistance: f64,
    pub inertia: f64,
    pub friction: f64,
    pub dry_friction: f64,
    pub load_torque: f64,
    pub unbalance_torque: f64,
    pub gear_ratio: f64,
}

pub const BASE: BaseValues = BaseValues {
    pole_pairs: 4.0,
    flux: 0.05,               // Wb at 100 %
    inductance: 2.0e-3,       // H at 100 %
    resistance: 0.4,          // Ohm at scale 125
    inertia: 5.0e-5,          // kg m^2 at 100 %
    friction: 2.0e-5,         // N m s at 100 %
    dry_friction: 5.0e-3,     // N m at 100 %
    load_torque: 0.04,        // N m at 100 %
    unbalance_torque: 0.5,    // N m per 100 %
    gear_ratio: 30.0,
};

/// One of the nine simulation inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    MainFlux,
    MeanInductance,
    Saliency,
    Resistance,
    Inertia,
    Friction,
    DryFriction,
    LoadTorque,
    Unbalance,
}

/// Ranges and label bit of a simulation input.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub nominal: (f64, f64),
    pub anomalous: &'static [(f64, f64)],
    pub bit: u16,
}

impl Param {
    pub const ALL: [Param; 9] = [
        Param::MainFlux,
        Param::MeanInductance,
        Param::Saliency,
        Param::Resistance,
        Param::Inertia,
        Param::Friction,
        Param::DryFriction,
        Param::LoadTorque,
        Param::Unbalance,
    ];

    pub fn spec(self) -> ParamSpec {
        const SYM: &[(f64, f64)] = &[(75.0, 85.0), (115.0, 125.0)];
        const HIGH: &[(f64, f64)] = &[(125.0, 200.0)];
        match self {
            Param::MainFlux => ParamSpec { name: "main_flux", nominal: (90.0, 110.0), anomalous: SYM, bit: 1 },
            Param::MeanInductance => {
                ParamSpec { name: "mean_inductance", nominal: (90.0, 110.0), anomalous: SYM, bit: 2 }
            }
            Param::Saliency => ParamSpec { name: "saliency", nominal: (0.0, 3.0), anomalous: &[(5.0, 10.0)], bit: 4 },
            Param::Resistance => ParamSpec {
                name: "resistance",
                nominal: (100.0, 150.0),
                anomalous: &[(50.0, 90.0), (160.0, 200.0)],
                bit: 8,
            },
            Param::Inertia => ParamSpec {
                name: "inertia",
                nominal: (90.0, 110.0),
                anomalous: &[(50.0, 80.0), (120.0, 150.0)],
                bit: 16,
            },
            Param::Friction => ParamSpec { name: "friction", nominal: (0.0, 110.0), anomalous: HIGH, bit: 32 },
            Param::DryFriction => ParamSpec { name: "dry_friction", nominal: (0.0, 110.0), anomalous: HIGH, bit: 64 },
            Param::LoadTorque => ParamSpec { name: "load_torque", nominal: (0.0, 110.0), anomalous: HIGH, bit: 128 },
            Param::Unbalance => {
                ParamSpec { name: "unbalance", nominal: (0.0, 2.0), anomalous: &[(5.0, 20.0)], bit: 256 }
            }
        }
    }
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

/// Health-status label: a 9-bit fault mask, or a synthetic OOD class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u16);

impl Label {
    pub const NOMINAL: Label = Label(0);
    pub const ALL_FAULTS: Label = Label(511);
    pub const OOD_IDS: [Label; 3] = [Label(20), Label(21), Label(22)];

    /// The eleven simulator classes: nominal, the nine single faults and the all-fault class.
    pub fn known_classes() -> [Label; 11] {
        [0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 511].map(Label)
    }

    pub fn is_known_class(self) -> bool {
        Self::known_classes().contains(&self)
    }

    pub fn is_ood(self) -> bool {
        Self::OOD_IDS.contains(&self)
    }

    pub fn is_fault(self) -> bool {
        self != Label::NOMINAL
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The nine simulation inputs, as percentage scale factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub main_flux: f64,
    pub mean_inductance: f64,
    pub saliency: f64,
    pub resistance: f64,
    pub inertia: f64,
    pub friction: f64,
    pub dry_friction: f64,
    pub load_torque: f64,
    pub unbalance: f64,
}

impl Default for PhysicalParams {
    /// Mid-range nominal values.
    fn default() -> Self {
        PhysicalParams {
            main_flux: 100.0,
            mean_inductance: 100.0,
            saliency: 1.5,
            resistance: 125.0,
            inertia: 100.0,
            friction: 55.0,
            dry_friction: 55.0,
            load_torque: 55.0,
            unbalance: 1.0,
        }
    }
}

impl PhysicalParams {
    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::MainFlux => self.main_flux,
            Param::MeanInductance => self.mean_inductance,
            Param::Saliency => self.saliency,
            Param::Resistance => self.resistance,
            Param::Inertia => self.inertia,
            Param::Friction => self.friction,
            Param::DryFriction => self.dry_friction,
            Param::LoadTorque => self.load_torque,
            Param::Unbalance => self.unbalance,
        }
    }

    pub fn set(&mut self, p: Param, v: f64) {
        match p {
            Param::MainFlux => self.main_flux = v,
            Param::MeanInductance => self.mean_inductance = v,
            Param::Saliency => self.saliency = v,
            Param::Resistance => self.resistance = v,
            Param::Inertia => self.inertia = v,
            Param::Friction => self.friction = v,
            Param::DryFriction => self.dry_friction = v,
            Param::LoadTorque => self.load_torque = v,
            Param::Unbalance => self.unbalance = v,
        }
    }

    /// Checks that every input lies in its nominal or anomalous range.
    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let spec = p.spec();
            let v = self.get(p);
            let ok = v.is_finite()
                && (within(v, spec.nominal) || spec.anomalous.iter().any(|&r| within(v, r)));
            if !ok {
                return Err(Error::invalid(format!("{} = {v} lies outside its nominal and anomalous ranges", spec.name)));
            }
        }
        Ok(())
    }

    /// Fault label: bit `b` is set iff the input carrying label `2^b` is anomalous.
    pub fn label(&self) -> Result<Label> {
        self.validate()?;
        let mut bits = 0u16;
        for p in Param::ALL {
            let spec = p.spec();
            if !within(self.get(p), spec.nominal) {
                bits |= spec.bit;
            }
        }
        Ok(Label(bits))
    }
}

/// Draws simulation inputs for a simulator class.
///
/// Each input is uniform on its nominal range when its bit is clear; when the
/// bit is set, one anomalous sub-interval is picked with probability
/// proportional to its width and the value is uniform on it.
pub fn sample_params(label: Label, seed: u64) -> Result<PhysicalParams> {
    if !label.is_known_class() {
        return Err(Error::invalid(format!("unknown simulator class {label}")));
    }
    let mut rng = stream_rng(seed, 0x5A4D);
    let mut params = PhysicalParams::default();
    for p in Param::ALL {
        let spec = p.spec();
        let (lo, hi) = if label.0 & spec.bit != 0 {
            pick_interval(spec.anomalous, rng.random::<f64>())
        } else {
            spec.nominal
        };
        params.set(p, lo + (hi - lo) * rng.random::<f64>());
    }
    Ok(params)
}

fn pick_interval(intervals: &[(f64, f64)], u: f64) -> (f64, f64) {
    let total: f64 = intervals.iter().map(|(lo, hi)| hi - lo).sum();
    let mut acc = 0.0;
    for &(lo, hi) in intervals {
        acc += (hi - lo) / total;
        if u < acc {
            return (lo, hi);
        }
    }
    *intervals.last().expect("at least one interval")
}

/// Valve set-point profile family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrajType {
    /// Long multi-step hold.
    T1,
    /// Single open-close.
    T2,
    /// Staircase.
    T3,
}

impl TrajType {
    pub const ALL: [TrajType; 3] = [TrajType::T1, TrajType::T2, TrajType::T3];

    /// Default duration in seconds.
    pub fn default_duration(self) -> f64 {
        match self {
            TrajType::T1 => 60.0,
            TrajType::T2 => 5.0,
            TrajType::T3 => 15.0,
        }
    }

    pub fn index(self) -> u32 {
        match self {
            TrajType::T1 => 1,
            TrajType::T2 => 2,
            TrajType::T3 => 3,
        }
    }

    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            1 => Ok(TrajType::T1),
            2 => Ok(TrajType::T2),
            3 => Ok(TrajType::T3),
            _ => Err(Error::invalid(format!("unknown trajectory type {i}"))),
        }
    }
}

impl fmt::Display for TrajType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.index())
    }
}

impl FromStr for TrajType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim_start_matches(['T', 't']) {
            "1" => Ok(TrajType::T1),
            "2" => Ok(TrajType::T2),
            "3" => Ok(TrajType::T3),
            _ => Err(Error::invalid(format!("unknown trajectory type '{s}'"))),
        }
    }
}

/// A labeled multichannel series sampled at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    pub label: Label,
    pub traj_type: TrajType,
    pub sample_rate: f64,
    /// One series per entry of [`CHANNEL_NAMES`], all of equal length.
    pub channels: Vec<Vec<f32>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn channel(&self, name: &str) -> Option<&[f32]> {
        CHANNEL_NAMES.iter().position(|n| *n == name).map(|i| self.channels[i].as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != N_CHANNELS {
            return Err(Error::shape(format!("{N_CHANNELS} channels"), self.channels.len()));
        }
        let n = self.len();
        if n == 0 || self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("trajectory channels must be non-empty and of equal length"));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let n = self.len();
        let mut c = Container::new(
            TRAJECTORY_KIND,
            TRAJECTORY_VERSION,
            json!({
                "id": self.id,
                "label": self.label.0,
                "traj_type": self.traj_type.to_string(),
                "sample_rate": self.sample_rate,
                "channel_names": CHANNEL_NAMES,
                "samples": n,
            }),
        );
        let flat: Vec<f32> = self.channels.iter().flatten().copied().collect();
        c.push(Tensor::f32("channels", vec![N_CHANNELS, n], flat));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = &c.meta;
        let names: Vec<String> = serde_json::from_value(meta["channel_names"].clone())?;
        if names.iter().map(String::as_str).ne(CHANNEL_NAMES.iter().copied()) {
            return Err(Error::Format("trajectory channel names do not match the expected layout".into()));
        }
        let field = |k: &str| meta[k].as_u64().ok_or_else(|| Error::Format(format!("trajectory header lacks '{k}'")));
        let id = field("id")? as u32;
        let label = Label(field("label")? as u16);
        let n = field("samples")? as usize;
        let traj_type: TrajType = meta["traj_type"]
            .as_str()
            .ok_or_else(|| Error::Format("trajectory header lacks 'traj_type'".into()))?
            .parse()?;
        let sample_rate = meta["sample_rate"]
            .as_f64()
            .ok_or_else(|| Error::Format("trajectory header lacks 'sample_rate'".into()))?;
        let flat = c.f32s("channels")?;
        if flat.len() != N_CHANNELS * n {
            return Err(Error::shape(N_CHANNELS * n, flat.len()));
        }
        let channels = flat.chunks_exact(n.max(1)).map(<[f32]>::to_vec).collect();
        let traj = Trajectory { id, label, traj_type, sample_rate, channels };
        traj.validate()?;
        Ok(traj)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, TRAJECTORY_KIND, TRAJECTORY_VERSION)?)
    }

    /// Human-readable export: a time column followed by one column per channel.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "time_s")?;
        for name in CHANNEL_NAMES {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{}", i as f64 / self.sample_rate)?;
            for ch in &self.channels {
                write!(w, ",{}", ch[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }
}

/// Valve set-point (degrees) over normalised time `u = t / duration`.
struct Profile {
    /// (start fraction, level in degrees), sorted by start.
    steps: Vec<(f64, f64)>,
}

impl Profile {
    fn new(traj_type: TrajType, rng: &mut impl Rng) -> Self {
        let mut steps = vec![(0.0, 0.0)];
        match traj_type {
            TrajType::T1 => {
                for k in 0..6 {
                    let start = 0.02 + k as f64 / 6.0;
                    steps.push((start, rng.random_range(10.0..90.0)));
                }
            }
            TrajType::T2 => {
                steps.push((0.1, rng.random_range(70.0..90.0)));
                steps.push((0.5, 0.0));
            }
            TrajType::T3 => {
                let stair = rng.random_range(11.0..13.0);
                for k in 1..=7 {
                    steps.push((k as f64 / 8.0 - 0.06, stair * k as f64));
                }
            }
        }
        Profile { steps }
    }

    fn at(&self, u: f64) -> f64 {
        self.steps.iter().take_while(|(s, _)| *s <= u).last().map_or(0.0, |(_, v)| *v)
    }
}

/// Controller gains, tuned on the nominal plant.
struct Gains {
    current_kp: f64,
    current_ki: f64,
    speed_kp: f64,
    speed_ki: f64,
    position_kp: f64,
    max_speed: f64,
    max_torque: f64,
    max_voltage: f64,
    torque_constant: f64,
}

impl Gains {
    fn nominal() -> Self {
        let current_bw = 2.0 * std::f64::consts::PI * 60.0;
        let speed_bw = 50.0;
        Gains {
            current_kp: BASE.inductance * current_bw,
            current_ki: BASE.resistance * current_bw,
            speed_kp: BASE.inertia * speed_bw,
            speed_ki: BASE.inertia * speed_bw * speed_bw / 4.0,
            position_kp: 12.0,
            max_speed: 120.0,
            max_torque: 0.3,
            max_voltage: 48.0,
            torque_constant: 1.5 * BASE.pole_pairs * BASE.flux,
        }
    }
}

/// Simulates one trajectory.
///
/// Deterministic for a fixed `(params, traj_type, duration, seed)`; the seed
/// drives the set-point profile jitter and the sensor noise.
pub fn simulate(params: &PhysicalParams, traj_type: TrajType, duration: f64, seed: u64) -> Result<Trajectory> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    let label = params.label()?;
    let n = (duration * SAMPLE_RATE).round() as usize;
    if n == 0 {
        return Err(Error::invalid("duration shorter than one sample"));
    }

    let mut rng = stream_rng(seed, 0x7EA1);
    let profile = Profile::new(traj_type, &mut rng);
    let g = Gains::nominal();

    // Physical plant.
    let pp = BASE.pole_pairs;
    let psi = BASE.flux * params.main_flux / 100.0;
    let l_mean = BASE.inductance * params.mean_inductance / 100.0;
    let ld = l_mean * (1.0 - params.saliency / 100.0);
    let lq = l_mean * (1.0 + params.saliency / 100.0);
    let res = BASE.resistance * params.resistance / 125.0;
    let inertia = BASE.inertia * params.inertia / 100.0;
    let visc = BASE.friction * params.friction / 100.0;
    let coulomb = BASE.dry_friction * params.dry_friction / 100.0;
    let load = BASE.load_torque * params.load_torque / 100.0;
    let unbalance = BASE.unbalance_torque * params.unbalance / 100.0;
    let deg_per_rad = 180.0 / std::f64::consts::PI;

    let dt = 1.0 / SAMPLE_RATE;
    let substeps = 10;
    let h = dt / substeps as f64;

    // States.
    let (mut id, mut iq, mut w, mut theta) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    // Controller memory.
    let (mut int_d, mut int_q, mut int_w) = (0.0f64, 0.0f64, 0.0f64);
    let mut pos_ref = 0.0f64;

    let noise_sigma: Vec<(usize, f64)> = SENSOR_SPAN.iter().map(|&(c, span)| (c, NOISE_FRACTION * span)).collect();
    let mut channels: Vec<Vec<f32>> = (0..N_CHANNELS).map(|_| Vec::with_capacity(n)).collect();
    let mut noise = [0.0f64; N_CHANNELS];

    for k in 0..n {
        let u = k as f64 / n as f64;
        for &(c, sigma) in &noise_sigma {
            let z: f64 = StandardNormal.sample(&mut rng);
            noise[c] = sigma * z;
        }
        // Sensors.
        let id_meas = id + noise[4];
        let iq_meas = iq + noise[5];
        let pos_meas = theta + noise[8];
        let speed_meas = w + noise[10];
        let posv_meas = theta / BASE.gear_ratio * deg_per_rad + noise[13];

        // Reference generation.
        let posv_set = profile.at(u);
        let posm_set = posv_set / deg_per_rad * BASE.gear_ratio;
        let max_step = g.max_speed * dt;
        let prev_ref = pos_ref;
        pos_ref += (posm_set - pos_ref).clamp(-max_step, max_step);
        let ff_speed = (pos_ref - prev_ref) / dt;

        // Position and speed loops.
        let speed_ref =
            (ff_speed + g.position_kp * (pos_ref - pos_meas)).clamp(-1.5 * g.max_speed, 1.5 * g.max_speed);
        let speed_err = speed_ref - speed_meas;
        let torque_unsat = g.speed_kp * speed_err + int_w;
        let torque_ref = torque_unsat.clamp(-g.max_torque, g.max_torque);
        if torque_unsat == torque_ref || torque_unsat.signum() != speed_err.signum() {
            int_w += g.speed_ki * speed_err * dt;
        }
        let iq_ref = torque_ref / g.torque_constant;

        // Current loops with decoupling on nominal parameters.
        let we_meas = pp * speed_meas;
        let err_d = -id_meas;
        let err_q = iq_ref - iq_meas;
        let vd_unsat = g.current_kp * err_d + int_d - we_meas * BASE.inductance * iq_meas;
        let vq_unsat = g.current_kp * err_q + int_q + we_meas * (BASE.inductance * id_meas + BASE.flux);
        let vd_new = vd_unsat.clamp(-g.max_voltage, g.max_voltage);
        let vq_new = vq_unsat.clamp(-g.max_voltage, g.max_voltage);
        if vd_new == vd_unsat {
            int_d += g.current_ki * err_d * dt;
        }
        if vq_new == vq_unsat {
            int_q += g.current_ki * err_q * dt;
        }

        // Record the sample that the controller acted on.
        let row = [
            vd_new,
            vq_new,
            we_meas,
            iq_ref,
            id_meas,
            iq_meas,
            posm_set,
            pos_ref,
            pos_meas,
            speed_ref,
            speed_meas,
            torque_ref,
            posv_set,
            posv_meas,
        ];
        for (ch, v) in channels.iter_mut().zip(row) {
            ch.push(v as f32);
        }
        let (vd, vq) = (vd_new, vq_new);

        // Plant integration over one control period (semi-implicit Euler).
        for _ in 0..substeps {
            let we = pp * w;
            id += h * (vd - res * id + we * lq * iq) / ld;
            iq += h * (vq - res * iq - we * ld * id - we * psi) / lq;
            let te = 1.5 * pp * (psi * iq + (ld - lq) * id * iq);
            let friction = visc * w + coulomb * (w / 0.5).tanh();
            let disturbance = load + unbalance * theta.sin();
            w += h * (te - friction - disturbance) / inertia;
            theta += h * w;
        }
    }

    let traj = Trajectory { id: 0, label, traj_type, sample_rate: SAMPLE_RATE, channels };
    traj.validate()?;
    Ok(traj)
}

/// Affine corruption used to fabricate out-of-distribution classes:
/// `y_i = x_i * var + shift + i * trend` on every channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodTransform {
    pub class: Label,
    pub var: f64,
    pub shift: f64,
    pub trend: f64,
}

impl OodTransform {
    pub const TABLE: [OodTransform; 3] = [
        OodTransform { class: Label(20), var: -1.0, shift: 5.0, trend: 0.0 },
        OodTransform { class: Label(21), var: 1.0, shift: 5.0, trend: 0.0 },
        OodTransform { class: Label(22), var: 1.0, shift: 5.0, trend: 1e-5 },
    ];
}

pub fn make_ood(src: &Trajectory, transform: &OodTransform) -> Trajectory {
    let channels = src
        .channels
        .iter()
        .map(|ch| {
            ch.iter()
                .enumerate()
                .map(|(i, &x)| (x as f64 * transform.var + transform.shift + i as f64 * transform.trend) as f32)
                .collect()
        })
        .collect();
    Trajectory { channels, label: transform.class, ..src.clone() }
}

/// Number of trajectories of one class and type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub label: Label,
    pub traj_type: TrajType,
    pub count: usize,
}

/// Composition of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub entries: Vec<CorpusEntry>,
    /// Multiplies the default duration of every trajectory type.
    pub duration_scale: f64,
    /// Id of the first generated trajectory.
    pub first_id: u32,
}

impl DatasetSpec {
    pub fn empty() -> Self {
        DatasetSpec { entries: Vec::new(), duration_scale: 1.0, first_id: 0 }
    }

    /// Splits `total` over `classes` by `ratios` (largest remainder), then
    /// spreads every class evenly over the three trajectory types.
    pub fn from_ratios(total: usize, classes: &[(Label, f64)]) -> Self {
        let sum: f64 = classes.iter().map(|(_, r)| r).sum();
        let raw: Vec<f64> = classes.iter().map(|(_, r)| total as f64 * r / sum).collect();
        let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
        let mut remaining = total - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..classes.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            counts[i] += 1;
            remaining -= 1;
        }
        let mut entries = Vec::new();
        for ((label, _), count) in classes.iter().zip(counts) {
            for (t, traj_type) in TrajType::ALL.iter().enumerate() {
                let c = count / 3 + usize::from(t < count % 3);
                if c > 0 {
                    entries.push(CorpusEntry { label: *label, traj_type: *traj_type, count: c });
                }
            }
        }
        DatasetSpec { entries, duration_scale: 1.0, first_id: 0 }
    }

    /// Development corpus: classes 0/16/128/511 in equal shares.
    pub fn development(total: usize) -> Self {
        Self::from_ratios(total, &[(Label(0), 0.25), (Label(16), 0.25), (Label(128), 0.25), (Label(511), 0.25)])
    }

    /// Final validation corpus: 85 % nominal, 5 % for each fault class.
    pub fn final_validation(total: usize) -> Self {
        Self::from_ratios(total, &[(Label(0), 0.85), (Label(16), 0.05), (Label(128), 0.05), (Label(511), 0.05)])
    }

    pub fn with_duration_scale(mut self, scale: f64) -> Self {
        self.duration_scale = scale;
        self
    }

    pub fn with_first_id(mut self, id: u32) -> Self {
        self.first_id = id;
        self
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn count_of(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).map(|e| e.count).sum()
    }
}

/// Generates a reproducible corpus; trajectory `j` gets id `first_id + j`.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Vec<Trajectory>> {
    if !(spec.duration_scale > 0.0) {
        return Err(Error::invalid("duration_scale must be positive"));
    }
    let jobs: Vec<(u32, Label, TrajType)> = spec
        .entries
        .iter()
        .flat_map(|e| std::iter::repeat_n((e.label, e.traj_type), e.count))
        .enumerate()
        .map(|(j, (label, tt))| (spec.first_id + j as u32, label, tt))
        .collect();
    jobs.par_iter()
        .map(|&(id, label, traj_type)| {
            let traj_seed = crate::rng::derive_seed(seed, id as u64);
            let params = sample_params(label, traj_seed)?;
            let duration = traj_type.default_duration() * spec.duration_scale;
            let mut traj = simulate(&params, traj_type, duration, traj_seed)?;
            traj.id = id;
            Ok(traj)
        })
        .collect()
}
