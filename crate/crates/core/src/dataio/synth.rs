use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{ChargeSnippet, FleetDataset};
use crate::error::{Error, Result};
use crate::numcore::{SeededRng, Tensor};

const V_MAX: f64 = 4.2;
const OCV_LO: f64 = 3.0;
const OCV_SPAN: f64 = 1.2;
const OCV_CURVE: f64 = 2.5;

/// Synthetic fleet generator settings. Ranges are `[lo, hi]`, drawn
/// uniformly per vehicle (or per snippet where noted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub vehicles: usize,
    pub fault_fraction: f64,
    pub snippets_per_vehicle: usize,
    pub seq_len: usize,
    /// Gaussian measurement noise, V / A / °C.
    pub voltage_noise: f64,
    pub current_noise: f64,
    pub temperature_noise: f64,
    /// Charge current during the constant-current phase, A.
    pub charge_current: [f64; 2],
    /// Internal resistance of a healthy pack, Ω.
    pub resistance: [f64; 2],
    /// Resistance multiplier of faulty vehicles.
    pub fault_resistance_factor: [f64; 2],
    /// Depth (V) and duration (steps) of transient voltage dips on faulty vehicles.
    pub dip_depth: [f64; 2],
    pub dip_duration: [usize; 2],
    pub dips_per_snippet: [usize; 2],
    pub ambient_temperature: [f64; 2],
    /// Steady-state temperature rise per watt of ohmic heating, K/W.
    pub thermal_resistance: [f64; 2],
    /// First-order thermal time constant, steps.
    pub thermal_lag: [f64; 2],
    /// Charge capacity in ampere-steps (state of charge gained per step is I/Q).
    pub capacity: [f64; 2],
    /// Constant-voltage current decay time constant, steps.
    pub cv_decay: [f64; 2],
    /// State of charge when a snippet starts (per snippet).
    pub start_soc: [f64; 2],
    pub mileage_km: [f64; 2],
    pub km_per_cycle: [f64; 2],
    /// Faulty vehicles draw mileage from the upper `1 - bias` part of the range.
    pub fault_meta_bias: f64,
    /// Constant shifts applied to every voltage / temperature sample, for
    /// building sub-fleets with distinct sensor calibrations.
    pub voltage_offset: f64,
    pub temperature_offset: f64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vehicles: 40,
            fault_fraction: 0.15,
            snippets_per_vehicle: 8,
            seq_len: 128,
            voltage_noise: 0.004,
            current_noise: 0.03,
            temperature_noise: 0.05,
            charge_current: [2.0, 3.0],
            resistance: [0.035, 0.05],
            fault_resistance_factor: [1.8, 2.6],
            dip_depth: [0.04, 0.10],
            dip_duration: [3, 8],
            dips_per_snippet: [1, 2],
            ambient_temperature: [18.0, 28.0],
            thermal_resistance: [12.0, 18.0],
            thermal_lag: [20.0, 40.0],
            capacity: [200.0, 260.0],
            cv_decay: [20.0, 35.0],
            start_soc: [0.05, 0.35],
            mileage_km: [5_000.0, 150_000.0],
            km_per_cycle: [250.0, 350.0],
            fault_meta_bias: 0.3,
            voltage_offset: 0.0,
            temperature_offset: 0.0,
            id_prefix: String::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vehicles == 0 || self.snippets_per_vehicle == 0 {
            return bad("vehicle and snippet counts must be positive".into());
        }
        if self.seq_len < 2 {
            return bad(format!("seq_len must be at least 2, got {}", self.seq_len));
        }
        if !(0.0..=1.0).contains(&self.fault_fraction) {
            return bad(format!("fault_fraction must be in [0,1], got {}", self.fault_fraction));
        }
        if !(0.0..1.0).contains(&self.fault_meta_bias) {
            return bad(format!("fault_meta_bias must be in [0,1), got {}", self.fault_meta_bias));
        }
        let noises = [self.voltage_noise, self.current_noise, self.temperature_noise];
        if noises.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
            return bad("noise levels must be finite and non-negative".into());
        }
        let ranges = [
            ("charge_current", self.charge_current, 0.0),
            ("resistance", self.resistance, 0.0),
            ("fault_resistance_factor", self.fault_resistance_factor, 1.0),
            ("dip_depth", self.dip_depth, 0.0),
            ("ambient_temperature", self.ambient_temperature, f64::NEG_INFINITY),
            ("thermal_resistance", self.thermal_resistance, 0.0),
            ("thermal_lag", self.thermal_lag, 1.0),
            ("capacity", self.capacity, 0.0),
            ("cv_decay", self.cv_decay, 0.0),
            ("start_soc", self.start_soc, 0.0),
            ("mileage_km", self.mileage_km, 0.0),
            ("km_per_cycle", self.km_per_cycle, 0.0),
        ];
        for (name, [lo, hi], min) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min) {
                return bad(format!("{name} must be a finite range [lo, hi] with lo >= {min}"));
            }
        }
        if self.start_soc[1] >= 1.0 {
            return bad("start_soc must stay below 1".into());
        }
        if self.dip_duration[0] == 0 || self.dip_duration[0] > self.dip_duration[1] {
            return bad("dip_duration must be a range of positive step counts".into());
        }
        if self.dips_per_snippet[0] > self.dips_per_snippet[1] {
            return bad("dips_per_snippet must be a range [lo, hi]".into());
        }
        Ok(())
    }

    /// Number of faulty vehicles, `round(fault_fraction · vehicles)`.
    pub fn fault_count(&self) -> usize {
        (self.fault_fraction * self.vehicles as f64).round() as usize
    }
}

struct Vehicle {
    faulty: bool,
    current: f64,
    resistance: f64,
    ambient: f64,
    thermal_resistance: f64,
    thermal_lag: f64,
    capacity: f64,
    cv_decay: f64,
    mileage: f64,
    km_per_cycle: f64,
}

fn draw(rng: &mut SeededRng, [lo, hi]: [f64; 2]) -> f64 {
    rng.uniform_range(lo, hi)
}

fn draw_count(rng: &mut SeededRng, [lo, hi]: [usize; 2]) -> usize {
    lo + (rng.uniform() * (hi - lo + 1) as f64) as usize
}

fn ocv(soc: f64) -> f64 {
    let s = soc.clamp(0.0, 1.0);
    OCV_LO + OCV_SPAN * (1.0 - (-OCV_CURVE * s).exp()) / (1.0 - (-OCV_CURVE).exp())
}

fn vehicle(cfg: &SynthConfig, faulty: bool, rng: &mut SeededRng) -> Vehicle {
    let mut resistance = draw(rng, cfg.resistance);
    if faulty {
        resistance *= draw(rng, cfg.fault_resistance_factor);
    }
    let u = rng.uniform();
    let u = if faulty {
        cfg.fault_meta_bias + (1.0 - cfg.fault_meta_bias) * u
    } else {
        u
    };
    Vehicle {
        faulty,
        current: draw(rng, cfg.charge_current),
        resistance,
        ambient: draw(rng, cfg.ambient_temperature),
        thermal_resistance: draw(rng, cfg.thermal_resistance),
        thermal_lag: draw(rng, cfg.thermal_lag),
        capacity: draw(rng, cfg.capacity),
        cv_decay: draw(rng, cfg.cv_decay),
        mileage: cfg.mileage_km[0] + (cfg.mileage_km[1] - cfg.mileage_km[0]) * u,
        km_per_cycle: draw(rng, cfg.km_per_cycle),
    }
}

/// One CC/CV charge: `seq_len × 3` rows of (voltage, current, temperature).
fn charge_profile(cfg: &SynthConfig, v: &Vehicle, rng: &mut SeededRng) -> Vec<f64> {
    let m = cfg.seq_len;
    let mut soc = draw(rng, cfg.start_soc);
    let mut temp = v.ambient + rng.uniform();
    let mut cv_since: Option<usize> = None;
    let mut clean = Vec::with_capacity(m * 3);
    for t in 0..m {
        let (volt, cur) = match cv_since {
            None if ocv(soc) + v.current * v.resistance < V_MAX => {
                (ocv(soc) + v.current * v.resistance, v.current)
            }
            None => {
                cv_since = Some(t);
                (V_MAX, v.current)
            }
            Some(t0) => (V_MAX, v.current * (-((t - t0) as f64) / v.cv_decay).exp()),
        };
        clean.extend_from_slice(&[volt, cur, temp]);
        soc = (soc + cur / v.capacity).min(1.0);
        let heat = cur * cur * v.resistance * v.thermal_resistance;
        temp += (v.ambient + heat - temp) / v.thermal_lag;
    }
    if v.faulty {
        for _ in 0..draw_count(rng, cfg.dips_per_snippet) {
            let dur = draw_count(rng, cfg.dip_duration).min(m);
            let start = (rng.uniform() * (m - dur + 1) as f64) as usize;
            let depth = draw(rng, cfg.dip_depth);
            for k in 0..dur {
                let shape = (std::f64::consts::PI * (k as f64 + 0.5) / dur as f64).sin();
                clean[(start + k) * 3] -= depth * shape;
            }
        }
    }
    let noise = [cfg.voltage_noise, cfg.current_noise, cfg.temperature_noise];
    let offset = [cfg.voltage_offset, 0.0, cfg.temperature_offset];
    clean
        .chunks_exact(3)
        .flat_map(|row| {
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = row[c] + offset[c] + noise[c] * rng.normal();
            }
            out
        })
        .collect()
}

/// Deterministic synthetic fleet of CC/CV charging snippets; exactly
/// `round(fault_fraction · vehicles)` vehicles are faulty (raised internal
/// resistance and transient voltage dips).
pub fn synth_fleet(cfg: &SynthConfig, seed: u64) -> Result<FleetDataset> {
    cfg.validate()?;
    let root = SeededRng::new(seed).derive_str("synth_fleet");
    let mut faulty = vec![false; cfg.vehicles];
    for i in index::sample(&mut root.derive_str("faults"), cfg.vehicles, cfg.fault_count()) {
        faulty[i] = true;
    }
    let mut snippets = Vec::with_capacity(cfg.vehicles * cfg.snippets_per_vehicle);
    for (vi, &is_faulty) in faulty.iter().enumerate() {
        let vrng = root.derive(vi as u64);
        let veh = vehicle(cfg, is_faulty, &mut vrng.derive(0));
        let vehicle_id = format!("{}V{vi:03}", cfg.id_prefix);
        let mut mileage = veh.mileage;
        for si in 0..cfg.snippets_per_vehicle {
            let mut srng = vrng.derive(si as u64 + 1);
            let data = charge_profile(cfg, &veh, &mut srng);
            mileage += srng.uniform_range(100.0, 400.0);
            let cycles = (mileage / veh.km_per_cycle).round();
            snippets.push(ChargeSnippet {
                snippet_id: format!("{vehicle_id}-S{si:03}"),
                vehicle_id: vehicle_id.clone(),
                channels: Tensor::matrix(cfg.seq_len, 3, data)?,
                meta: vec![mileage, cycles],
                label: u8::from(is_faulty),
            });
        }
    }
    FleetDataset::new(
        snippets,
        ["voltage", "current", "temperature"].map(String::from).to_vec(),
        ["mileage_km", "cycle_count"].map(String::from).to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            vehicles: 12,
            snippets_per_vehicle: 3,
            seq_len: 64,
            fault_fraction: 0.25,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn no_faults_means_all_normal() {
        let ds = synth_fleet(&SynthConfig { fault_fraction: 0.0, ..small() }, 1).unwrap();
        assert!(ds.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = synth_fleet(&small(), 5).unwrap();
        assert_eq!(a, synth_fleet(&small(), 5).unwrap());
        assert_ne!(a, synth_fleet(&small(), 6).unwrap());
        assert_eq!(a.len(), 36);
        assert_eq!(a.seq_len(), 64);
        assert_eq!(a.num_channels(), 3);
        assert_eq!(a.meta_dim(), 2);
    }

    #[test]
    fn default_fleet_has_six_faulty_vehicles() {
        let cfg = SynthConfig {
            snippets_per_vehicle: 1,
            seq_len: 8,
            ..SynthConfig::default()
        };
        assert_eq!(cfg.fault_count(), 6);
        let ds = synth_fleet(&cfg, 0).unwrap();
        assert_eq!(ds.vehicles().iter().filter(|(_, l)| *l == 1).count(), 6);
    }

    #[test]
    fn faulty_vehicles_run_hotter() {
        let ds = synth_fleet(&SynthConfig { vehicles: 30, ..small() }, 2).unwrap();
        let mean_temp = |label: u8| {
            let rows: Vec<f64> = ds
                .snippets()
                .iter()
                .filter(|s| s.label == label)
                .map(|s| {
                    let c = &s.channels;
                    (0..c.rows()).map(|t| c.get(t, 2) - c.get(0, 2)).sum::<f64>() / c.rows() as f64
                })
                .collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        };
        assert!(mean_temp(1) > mean_temp(0) + 0.5, "{} vs {}", mean_temp(1), mean_temp(0));
    }

    #[test]
    fn charge_profile_is_physical() {
        let ds = synth_fleet(&SynthConfig { fault_fraction: 0.0, voltage_noise: 0.0, current_noise: 0.0, temperature_noise: 0.0, ..small() }, 3).unwrap();
        for s in ds.snippets() {
            let c = &s.channels;
            for t in 0..c.rows() {
                assert!(c.get(t, 0) <= V_MAX + 1e-12);
                assert!(c.get(t, 1) > 0.0);
                if t > 0 {
                    assert!(c.get(t, 1) <= c.get(t - 1, 1) + 1e-12, "current never rises");
                }
            }
        }
    }

    #[test]
    fn offsets_shift_channels() {
        let base = synth_fleet(&small(), 4).unwrap();
        let moved = synth_fleet(&SynthConfig { voltage_offset: 0.5, temperature_offset: -3.0, id_prefix: "B".into(), ..small() }, 4).unwrap();
        let (a, b) = (&base.snippets()[0].channels, &moved.snippets()[0].channels);
        assert!((b.get(5, 0) - a.get(5, 0) - 0.5).abs() < 1e-12);
        assert!((b.get(5, 2) - a.get(5, 2) + 3.0).abs() < 1e-12);
        assert!(moved.snippets()[0].vehicle_id.starts_with('B'));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(synth_fleet(&SynthConfig { vehicles: 0, ..small() }, 0).is_err());
        assert!(synth_fleet(&SynthConfig { fault_fraction: 1.5, ..small() }, 0).is_err());
        assert!(synth_fleet(&SynthConfig { resistance: [0.05, 0.01], ..small() }, 0).is_err());
    }
}
