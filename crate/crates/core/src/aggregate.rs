//! Server-side aggregation: FedAvg, FedMedian and the adaptive FedOpt family
//! (FedAdagrad, FedAdam, FedYogi).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramcore::{coordinate_median, linear_combine, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedMedian,
    FedAdagrad,
    FedAdam,
    FedYogi,
}

impl Strategy {
    /// Fixed order used for sweeps and tie-breaking.
    pub const ALL: [Strategy; 5] = [
        Strategy::FedAvg,
        Strategy::FedAdagrad,
        Strategy::FedAdam,
        Strategy::FedYogi,
        Strategy::FedMedian,
    ];

    pub fn is_fedopt(self) -> bool {
        matches!(
            self,
            Strategy::FedAdagrad | Strategy::FedAdam | Strategy::FedYogi
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedMedian => "fedmedian",
            Strategy::FedAdagrad => "fedadagrad",
            Strategy::FedAdam => "fedadam",
            Strategy::FedYogi => "fedyogi",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Server hyperparameters; serialized verbatim into run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub strategy: Strategy,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
    /// Weight clients equally instead of by sample count (FedAvg/FedOpt only).
    #[serde(default)]
    pub uniform_weights: bool,
}

impl ServerConfig {
    /// Literature defaults: eta 0.1, beta1 0.9 (0 for FedAdagrad), beta2 0.99, tau 1e-3.
    pub fn defaults_for(strategy: Strategy) -> Self {
        Self {
            strategy,
            eta: 0.1,
            beta1: if strategy == Strategy::FedAdagrad {
                0.0
            } else {
                0.9
            },
            beta2: 0.99,
            tau: 1e-3,
            uniform_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub params: ParamVector,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorState {
    pub config: ServerConfig,
    /// Server first moment.
    pub m: ParamVector,
    /// Server second moment.
    pub v: ParamVector,
    pub round_index: u64,
}

impl AggregatorState {
    /// `m = 0`, `v = tau^2`, round 0.
    pub fn new(config: ServerConfig, like: &ParamVector) -> Self {
        Self {
            config,
            m: ParamVector::zeros(like.layout(), like.len()),
            v: ParamVector::filled(like.layout(), like.len(), config.tau * config.tau),
            round_index: 0,
        }
    }
}

fn sorted_updates(updates: &[ClientUpdate]) -> Result<Vec<&ClientUpdate>> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("no client updates"));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for u in &sorted {
        if u.sample_count == 0 {
            return Err(Error::Precondition(format!(
                "client {} reports zero samples",
                u.client_id
            )));
        }
        sorted[0].params.compatible(&u.params)?;
    }
    Ok(sorted)
}

fn client_weights(sorted: &[&ClientUpdate], uniform: bool) -> Vec<f64> {
    if uniform {
        return vec![1.0 / sorted.len() as f64; sorted.len()];
    }
    let total: usize = sorted.iter().map(|u| u.sample_count).sum();
    sorted
        .iter()
        .map(|u| u.sample_count as f64 / total as f64)
        .collect()
}

fn fedavg(updates: &[ClientUpdate], uniform: bool) -> Result<ParamVector> {
    let sorted = sorted_updates(updates)?;
    let weights = client_weights(&sorted, uniform);
    let terms: Vec<(f64, &ParamVector)> = weights
        .iter()
        .zip(&sorted)
        .map(|(w, u)| (*w, &u.params))
        .collect();
    linear_combine(&terms)
}

/// Sample-count weighted mean, reduced in sorted client order.
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<ParamVector> {
    fedavg(updates, false)
}

/// Unweighted coordinate-wise median of client parameters.
pub fn aggregate_fedmedian(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let sorted = sorted_updates(updates)?;
    let refs: Vec<&ParamVector> = sorted.iter().map(|u| &u.params).collect();
    coordinate_median(&refs)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One adaptive server step. The pseudo-gradient is the weighted mean of the
/// per-client deltas `params_k - global_prev`.
pub fn fedopt_step(
    state: &AggregatorState,
    global_prev: &ParamVector,
    updates: &[ClientUpdate],
) -> Result<(AggregatorState, ParamVector)> {
    let cfg = state.config;
    if !cfg.strategy.is_fedopt() {
        return Err(Error::WrongStrategy(cfg.strategy.to_string()));
    }
    global_prev.compatible(&state.m)?;
    global_prev.compatible(&state.v)?;
    let sorted = sorted_updates(updates)?;
    global_prev.compatible(&sorted[0].params)?;

    let deltas = sorted
        .iter()
        .map(|u| u.params.zip_map(global_prev, |p, g| p - g))
        .collect::<Result<Vec<_>>>()?;
    let weights = client_weights(&sorted, cfg.uniform_weights);
    let terms: Vec<(f64, &ParamVector)> = weights.iter().copied().zip(&deltas).collect();
    let delta = linear_combine(&terms)?;

    let m = state
        .m
        .zip_map(&delta, |m, d| cfg.beta1 * m + (1.0 - cfg.beta1) * d)?;
    let v = state.v.zip_map(&delta, |v, d| {
        let d2 = d * d;
        match cfg.strategy {
            Strategy::FedAdagrad => v + d2,
            Strategy::FedAdam => cfg.beta2 * v + (1.0 - cfg.beta2) * d2,
            _ => v - (1.0 - cfg.beta2) * d2 * sign(v - d2),
        }
    })?;
    let values = global_prev
        .values()
        .iter()
        .zip(m.values().iter().zip(v.values()))
        .map(|(g, (m, v))| g + cfg.eta * m / (v.sqrt() + cfg.tau))
        .collect();
    let global = ParamVector::new(global_prev.layout(), values)?;
    Ok((
        AggregatorState {
            config: cfg,
            m,
            v,
            round_index: state.round_index + 1,
        },
        global,
    ))
}

/// Dispatches to the configured strategy. FedAvg/FedMedian leave the moments
/// untouched and only advance the round counter.
pub fn aggregate(
    state: &AggregatorState,
    global_prev: &ParamVector,
    updates: &[ClientUpdate],
) -> Result<(AggregatorState, ParamVector)> {
    let global = match state.config.strategy {
        Strategy::FedAvg => fedavg(updates, state.config.uniform_weights)?,
        Strategy::FedMedian => aggregate_fedmedian(updates)?,
        _ => return fedopt_step(state, global_prev, updates),
    };
    global_prev.compatible(&global)?;
    let mut next = state.clone();
    next.round_index += 1;
    Ok((next, global))
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use crate::paramcore::LayoutId;
    use proptest::prelude::*;

    const L: LayoutId = LayoutId(1);

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(L, v.to_vec()).unwrap()
    }

    fn upd(id: &str, v: &[f64], n: usize) -> ClientUpdate {
        ClientUpdate {
            client_id: id.into(),
            params: pv(v),
            sample_count: n,
        }
    }

    fn zero_state(strategy: Strategy, len: usize) -> AggregatorState {
        let mut s = AggregatorState::new(
            ServerConfig::defaults_for(strategy),
            &ParamVector::zeros(L, len),
        );
        s.v = ParamVector::zeros(L, len);
        s
    }

    #[test]
    fn fedavg_examples() {
        let out = aggregate_fedavg(&[upd("a", &[1.0, 3.0], 5), upd("b", &[3.0, 5.0], 5)]).unwrap();
        assert_eq!(out.values(), &[2.0, 4.0]);
        let out = aggregate_fedavg(&[upd("a", &[0.0, 0.0], 1), upd("b", &[4.0, 8.0], 3)]).unwrap();
        assert_eq!(out.values(), &[3.0, 6.0]);
        let out = aggregate_fedavg(&[upd("a", &[0.3, -7.1], 9)]).unwrap();
        assert_eq!(out.values(), &[0.3, -7.1]);
        assert!(matches!(aggregate_fedavg(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn fedmedian_examples() {
        let out = aggregate_fedmedian(&[
            upd("a", &[0.0], 1),
            upd("b", &[1.0], 50),
            upd("c", &[9.0], 1),
        ])
        .unwrap();
        assert_eq!(out.values(), &[1.0]);
        let same: Vec<ClientUpdate> = (0..4)
            .map(|i| upd(&format!("c{i}"), &[2.0, -1.0], i + 1))
            .collect();
        assert_eq!(aggregate_fedmedian(&same).unwrap().values(), &[2.0, -1.0]);

        let mut ups: Vec<ClientUpdate> = [[1.0, 1.1], [0.9, 1.0], [1.05, 0.95], [1.1, 0.9]]
            .iter()
            .enumerate()
            .map(|(i, v)| upd(&format!("h{i}"), v, 10))
            .collect();
        ups.push(upd("z", &[1000.0, -1000.0], 10));
        let out = aggregate_fedmedian(&ups).unwrap();
        assert!((0.9..=1.1).contains(&out.values()[0]));
        assert!((0.9..=1.1).contains(&out.values()[1]));
    }

    #[test]
    fn fedadagrad_hand_example() {
        let mut s = zero_state(Strategy::FedAdagrad, 1);
        s.config.eta = 0.1;
        s.config.tau = 1e-3;
        let (next, global) = fedopt_step(&s, &pv(&[0.0]), &[upd("a", &[0.5], 3)]).unwrap();
        assert_eq!(next.v.values(), &[0.25]);
        let expected = 0.1 * 0.5 / (0.25f64.sqrt() + 1e-3);
        assert!((global.values()[0] - expected).abs() < 1e-12);
        assert!((global.values()[0] - 0.09980).abs() < 1e-5);
        assert_eq!(next.round_index, 1);
    }

    #[test]
    fn zero_delta_is_a_fixed_point() {
        for strategy in [Strategy::FedAdagrad, Strategy::FedAdam, Strategy::FedYogi] {
            let prev = pv(&[0.7, -1.3, 2.0]);
            let mut s = AggregatorState::new(ServerConfig::defaults_for(strategy), &prev);
            s.v = pv(&[0.2, 0.0, 3.0]);
            let ups = [upd("a", prev.values(), 4), upd("b", prev.values(), 9)];
            let (next, global) = fedopt_step(&s, &prev, &ups).unwrap();
            assert_eq!(global, prev);
            assert_eq!(next.m, s.m);
            if strategy != Strategy::FedAdam {
                assert_eq!(next.v, s.v);
            }
            // Adam decays v by beta2; with v = 0 it too is unchanged.
            let z = zero_state(strategy, 3);
            let (next, global) = fedopt_step(&z, &prev, &ups).unwrap();
            assert_eq!((next.v, global), (z.v, prev.clone()));
        }
    }

    #[test]
    fn adam_and_yogi_coincide_from_zero_second_moment() {
        let prev = pv(&[0.1, 0.2]);
        let ups = [upd("a", &[0.5, -0.4], 2), upd("b", &[0.3, 0.9], 5)];
        let adam = fedopt_step(&zero_state(Strategy::FedAdam, 2), &prev, &ups).unwrap();
        let yogi = fedopt_step(&zero_state(Strategy::FedYogi, 2), &prev, &ups).unwrap();
        assert_eq!(adam.0.v, yogi.0.v);
        assert_eq!(adam.1, yogi.1);
    }

    #[test]
    fn fedopt_rejects_non_adaptive_state() {
        let s = AggregatorState::new(ServerConfig::defaults_for(Strategy::FedAvg), &pv(&[0.0]));
        assert!(matches!(
            fedopt_step(&s, &pv(&[0.0]), &[upd("a", &[1.0], 1)]),
            Err(Error::WrongStrategy(_))
        ));
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let prev = pv(&[0.0, 0.0]);
        let ups = [
            upd("b", &[1.0, 2.0], 1),
            upd("a", &[3.0, 0.0], 3),
            upd("c", &[-2.0, 5.0], 2),
        ];
        let s = AggregatorState::new(ServerConfig::defaults_for(Strategy::FedAvg), &prev);
        let (next, g) = aggregate(&s, &prev, &ups).unwrap();
        assert_eq!(g, aggregate_fedavg(&ups).unwrap());
        assert_eq!((next.round_index, &next.m, &next.v), (1, &s.m, &s.v));
        let s = AggregatorState::new(ServerConfig::defaults_for(Strategy::FedMedian), &prev);
        let (next, g) = aggregate(&s, &prev, &ups).unwrap();
        assert_eq!(g, aggregate_fedmedian(&ups).unwrap());
        assert_eq!(next.round_index, 1);
        let s = AggregatorState::new(ServerConfig::defaults_for(Strategy::FedYogi), &prev);
        assert_eq!(
            aggregate(&s, &prev, &ups).unwrap(),
            fedopt_step(&s, &prev, &ups).unwrap()
        );
    }

    #[test]
    fn strategy_names_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(
                serde_json::to_string(&s).unwrap(),
                format!("\"{}\"", s.name())
            );
        }
        assert!("fedsgd".parse::<Strategy>().is_err());
    }

    proptest! {
        #[test]
        fn fedavg_is_convex_and_order_free(
            rows in prop::collection::vec((prop::collection::vec(-50.0f64..50.0, 3), 1usize..20), 1..6),
        ) {
            let ups: Vec<ClientUpdate> = rows.iter().enumerate()
                .map(|(i, (v, n))| upd(&format!("c{i}"), v, *n)).collect();
            let out = aggregate_fedavg(&ups).unwrap();
            for i in 0..3 {
                let lo = ups.iter().map(|u| u.params.values()[i]).fold(f64::INFINITY, f64::min);
                let hi = ups.iter().map(|u| u.params.values()[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.values()[i] >= lo - 1e-9 && out.values()[i] <= hi + 1e-9);
            }
            let mut rev = ups.clone();
            rev.reverse();
            for strategy in Strategy::ALL {
                let prev = pv(&[0.0; 3]);
                let s = AggregatorState::new(ServerConfig::defaults_for(strategy), &prev);
                prop_assert_eq!(aggregate(&s, &prev, &ups).unwrap(), aggregate(&s, &prev, &rev).unwrap());
            }
        }

        #[test]
        fn equal_counts_give_arithmetic_mean(vals in prop::collection::vec(-100i32..100, 1..8)) {
            let ups: Vec<ClientUpdate> = vals.iter().enumerate()
                .map(|(i, v)| upd(&format!("c{i}"), &[*v as f64 * 0.5], 7)).collect();
            let mean = vals.iter().map(|v| *v as f64 * 0.5).sum::<f64>() / vals.len() as f64;
            prop_assert!((aggregate_fedavg(&ups).unwrap().values()[0] - mean).abs() < 1e-12);
        }

        #[test]
        fn adagrad_v_is_monotone_and_adam_v_nonnegative(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::seeding::rng_from_seed(seed);
            let mut prev = pv(&[0.0; 4]);
            let mut ada = AggregatorState::new(ServerConfig::defaults_for(Strategy::FedAdagrad), &prev);
            let mut adam = AggregatorState::new(ServerConfig::defaults_for(Strategy::FedAdam), &prev);
            for _ in 0..20 {
                let ups: Vec<ClientUpdate> = (0..3).map(|i| {
                    let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    upd(&format!("c{i}"), &v, rng.gen_range(1..10))
                }).collect();
                let (next, g) = fedopt_step(&ada, &prev, &ups).unwrap();
                for (a, b) in ada.v.values().iter().zip(next.v.values()) {
                    prop_assert!(b >= a);
                }
                ada = next;
                let (next, _) = fedopt_step(&adam, &prev, &ups).unwrap();
                prop_assert!(next.v.values().iter().all(|&x| x >= 0.0));
                adam = next;
                prev = g;
            }
        }
    }
}
