//! Leakage analysis: closed-form probabilities, mechanistic adversary
//! simulations, and a Monte-Carlo estimator that checks one against the
//! other.
//!
//! # The leak model
//!
//! Every party is equally likely to be the one that turns malicious, so a
//! given party does so with probability `1/n`. A malicious party can unmask
//! only its own packets, a fraction `X / (n X)` of all packets. Each of the
//! `m` candidate third parties is equally likely to be the one compromised,
//! and the leak also needs the runtime selection to land on it, which
//! happens with probability `1/m`. For a coalition of `r` parties the total is
//!
//! ```text
//! P(leak) = (1/m) * (r/n) * (r X / (n X)) = r^2 / (m n^2)
//! ```
//!
//! which reduces to `1 / (m n^2)` for a single party. The coalition
//! expression is sometimes written with an extra factor inside the second
//! bracket, `(r/n) * (r * sum_{1..r} X / sum_{1..n} X)`; read literally that
//! gives `r^3 / n^2` before the `1/m` factor, which exceeds 1 for `r > n^(2/3)`
//! and is not a probability. Only the first reading agrees with the
//! single-party value, so it is the one implemented here.
//!
//! All closed-form values are exact rationals ([`Probability`]); conversion
//! to `f64` happens once, at the edge.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Mul;

use itertools::Itertools;
use num_rational::Ratio;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissemination::{destination_probability, init_session, run_dissemination, DataBlock, SessionState};
use crate::error::{ConfigError, Result};
use crate::harness::config::SessionConfig;
use crate::maskpool::{decrypt_packet, EncryptedPacket, MaskFunction};
use crate::seed::{derive_seed, LABEL_REFERENCE, LABEL_TRIAL};
use crate::ttp::select_ttp;

/// `(block_tag, packet_index)`.
pub type PacketKey = (u64, u32);

/// An exact probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Probability(Ratio<u64>);

impl Probability {
    pub const ONE: Probability = Probability(Ratio::new_raw(1, 1));

    /// `numer / denom`. Panics on a zero denominator.
    pub fn new(numer: u64, denom: u64) -> Self {
        Probability(Ratio::new(numer, denom))
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    /// Correctly rounded whenever numerator and denominator are below 2^53.
    pub fn value(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl Mul for Probability {
    type Output = Probability;

    fn mul(self, rhs: Probability) -> Probability {
        Probability(self.0 * rhs.0)
    }
}

/// Chance that a particular party is the malicious one.
pub fn p_party_malicious(n: usize) -> Result<Probability, ConfigError> {
    if n == 0 {
        return Err(ConfigError::InvalidParameter("party count must be at least 1".into()));
    }
    Ok(Probability::new(1, n as u64))
}

/// Fraction of all packets one party can unmask: its own.
pub fn single_party_decrypt_fraction(own_packets: usize, total_packets: usize) -> Result<Probability, ConfigError> {
    if total_packets == 0 {
        return Err(ConfigError::InvalidParameter("total packet count is zero".into()));
    }
    if own_packets == 0 || own_packets > total_packets {
        return Err(ConfigError::InvalidParameter(format!(
            "own packet count {own_packets} outside 1..={total_packets}"
        )));
    }
    Ok(Probability::new(own_packets as u64, total_packets as u64))
}

/// `(1/m) (r/n) (r X / (n X))`.
pub fn total_leak_probability(n: usize, m: usize, r: usize, x: usize) -> Result<Probability, ConfigError> {
    if n == 0 {
        return Err(ConfigError::InvalidParameter("party count must be at least 1".into()));
    }
    if m == 0 {
        return Err(ConfigError::NoTtp);
    }
    if x == 0 {
        return Err(ConfigError::ZeroPackets);
    }
    if r == 0 {
        return Err(ConfigError::InvalidParameter("coalition must have at least one member".into()));
    }
    if r > n {
        return Err(ConfigError::CoalitionTooLarge { r, n });
    }
    let (n, m, r, x) = (n as u64, m as u64, r as u64, x as u64);
    Ok(Probability::new(1, m) * Probability::new(r, n) * Probability::new(r * x, n * x))
}

/// Total leak probability for every party count in `n_min..=n_max`.
pub fn leak_curve(
    n_min: usize,
    n_max: usize,
    m: usize,
    x: usize,
    r: usize,
) -> Result<Vec<(usize, Probability)>, ConfigError> {
    if n_min < 3 {
        return Err(ConfigError::TooFewParties(n_min));
    }
    if n_min > n_max {
        return Err(ConfigError::InvalidParameter(format!("empty range {n_min}..={n_max}")));
    }
    (n_min..=n_max)
        .map(|n| total_leak_probability(n, m, r, x).map(|p| (n, p)))
        .collect()
}

/// What a set of colluding parties (and optionally a compromised third
/// party) can bring to bear: their own drawn functions and every packet any
/// member has held. Never the rest of the pool.
#[derive(Debug, Clone)]
pub struct AdversaryModel {
    coalition: BTreeSet<usize>,
    ttp_compromised: Option<usize>,
    functions: Vec<(usize, MaskFunction)>,
    packets: BTreeMap<PacketKey, EncryptedPacket>,
}

impl AdversaryModel {
    pub fn observe(session: &SessionState, coalition: &BTreeSet<usize>, ttp_compromised: Option<usize>) -> Self {
        let current: BTreeMap<PacketKey, &EncryptedPacket> =
            session.holdings().map(|(_, e)| (e.key(), e)).collect();
        let members: Vec<_> = session
            .parties()
            .iter()
            .filter(|p| coalition.contains(&p.party_id()))
            .collect();
        let functions = members
            .iter()
            .map(|p| (p.party_id(), *p.drawn_function()))
            .collect();
        let packets = members
            .iter()
            .flat_map(|p| p.seen().iter())
            .filter_map(|k| current.get(k).map(|e| (*k, (*e).clone())))
            .collect();
        let model = AdversaryModel {
            coalition: coalition.clone(),
            ttp_compromised,
            functions,
            packets,
        };
        model.assert_hygiene(session);
        model
    }

    pub fn coalition(&self) -> &BTreeSet<usize> {
        &self.coalition
    }

    pub fn ttp_compromised(&self) -> Option<usize> {
        self.ttp_compromised
    }

    pub fn functions(&self) -> impl Iterator<Item = &MaskFunction> {
        self.functions.iter().map(|(_, f)| f)
    }

    pub fn packets(&self) -> impl Iterator<Item = &EncryptedPacket> {
        self.packets.values()
    }

    /// Panics if the model holds any function that is not a coalition
    /// member's own draw.
    pub fn assert_hygiene(&self, session: &SessionState) {
        assert!(self.functions.len() <= self.coalition.len());
        for (party, f) in &self.functions {
            assert!(self.coalition.contains(party), "function of non-member {party} in knowledge");
            assert_eq!(
                session.parties()[*party].drawn_function(),
                f,
                "knowledge holds a function party {party} never drew"
            );
        }
    }

    /// Keys of every known packet that some known function unmasks.
    pub fn decryptable(&self, session: &SessionState) -> BTreeSet<PacketKey> {
        let mut out = BTreeSet::new();
        for (key, e) in &self.packets {
            self.assert_hygiene(session);
            if self.functions().any(|f| decrypt_packet(f, e).is_ok()) {
                out.insert(*key);
            }
        }
        out
    }
}

/// Packets a coalition can unmask with nothing but its own functions,
/// attempted against every packet its members ever held.
pub fn simulate_coalition(session: &SessionState, coalition: &BTreeSet<usize>) -> BTreeSet<PacketKey> {
    AdversaryModel::observe(session, coalition, None).decryptable(session)
}

/// What a compromised third party sees: every packet with the party that
/// forwarded it, plus the public round count.
#[derive(Debug, Clone)]
pub struct TtpObservation {
    pub parties: usize,
    pub rounds: usize,
    pub arrivals: Vec<(usize, EncryptedPacket)>,
}

impl TtpObservation {
    pub fn from_session(session: &SessionState) -> Self {
        TtpObservation {
            parties: session.n(),
            rounds: session.round(),
            arrivals: session.holdings().map(|(p, e)| (p, e.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPosterior {
    pub block_tag: u64,
    /// Probability that the block came from each party, by party id.
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkabilityReport {
    pub blocks: Vec<BlockPosterior>,
    /// Largest posterior entry over all blocks.
    pub max_posterior: f64,
}

/// Exact matching enumeration is used up to this many parties.
const EXACT_MATCHING_LIMIT: usize = 8;

fn kernel_power(n: usize, rounds: usize) -> Vec<Vec<f64>> {
    let step: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| destination_probability(n, i, j)).collect())
        .collect();
    let mut acc: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..rounds {
        acc = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| acc[i][k] * step[k][j]).sum())
                    .collect()
            })
            .collect();
    }
    acc
}

/// Posterior over the origin of every reassembled block given the last-hop
/// senders, computed from the exact multi-round forwarding kernel. Up to
/// eight parties the one-block-per-party constraint is enforced by
/// enumerating all assignments; beyond that blocks are treated independently.
pub fn linkability(obs: &TtpObservation) -> LinkabilityReport {
    let n = obs.parties;
    let kernel = kernel_power(n, obs.rounds);
    let mut senders: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (from, e) in &obs.arrivals {
        senders.entry(e.block_tag).or_default().push(*from);
    }
    let tags: Vec<u64> = senders.keys().copied().collect();
    let likelihood: Vec<Vec<f64>> = senders
        .values()
        .map(|from| {
            let row: Vec<f64> = (0..n)
                .map(|origin| from.iter().map(|&s| kernel[origin][s]).product())
                .collect();
            let peak = row.iter().cloned().fold(0.0, f64::max);
            if peak > 0.0 {
                row.iter().map(|v| v / peak).collect()
            } else {
                row
            }
        })
        .collect();

    let mut posterior = vec![vec![0.0; n]; tags.len()];
    if tags.len() == n && n <= EXACT_MATCHING_LIMIT {
        let mut total = 0.0;
        for assignment in (0..n).permutations(n) {
            let w: f64 = assignment
                .iter()
                .enumerate()
                .map(|(b, &o)| likelihood[b][o])
                .product();
            if w > 0.0 {
                total += w;
                for (b, &o) in assignment.iter().enumerate() {
                    posterior[b][o] += w;
                }
            }
        }
        if total > 0.0 {
            for row in &mut posterior {
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
    }
    for (b, row) in posterior.iter_mut().enumerate() {
        if row.iter().sum::<f64>() == 0.0 {
            let sum: f64 = likelihood[b].iter().sum();
            *row = if sum > 0.0 {
                likelihood[b].iter().map(|v| v / sum).collect()
            } else {
                vec![1.0 / n as f64; n]
            };
        }
    }
    let max_posterior = posterior.iter().flatten().cloned().fold(0.0, f64::max);
    LinkabilityReport {
        blocks: tags
            .into_iter()
            .zip(posterior)
            .map(|(block_tag, posterior)| BlockPosterior { block_tag, posterior })
            .collect(),
        max_posterior,
    }
}

/// A compromised third party's best inference about which party owns each
/// block it reassembled.
pub fn simulate_malicious_ttp(session: &SessionState) -> LinkabilityReport {
    linkability(&TtpObservation::from_session(session))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakEstimate {
    pub analytic: f64,
    pub empirical: f64,
    pub std_error: f64,
    /// 95% normal-approximation half-width.
    pub ci_halfwidth: f64,
    pub trials: u64,
}

impl LeakEstimate {
    pub fn ci_low(&self) -> f64 {
        (self.empirical - self.ci_halfwidth).max(0.0)
    }

    pub fn ci_high(&self) -> f64 {
        (self.empirical + self.ci_halfwidth).min(1.0)
    }

    /// `|empirical - analytic|` measured in standard errors.
    pub fn deviation_in_std_errors(&self) -> f64 {
        let diff = (self.empirical - self.analytic).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }
}

const Z_95: f64 = 1.959_963_984_540_054;

/// Estimates the leak probability by sampling the product model: does the
/// coalition form (probability `r/n`), did the runtime selection land on the
/// compromised third party (one of `m`), and if both, which fraction of all
/// packets the sampled coalition unmasks. That fraction is not assumed: it
/// comes from trial decryption in a real session built for the purpose.
pub fn monte_carlo_leak(n: usize, m: usize, r: usize, x: usize, trials: u64, seed: u64) -> Result<LeakEstimate> {
    if n < 3 {
        return Err(ConfigError::TooFewParties(n).into());
    }
    if trials == 0 {
        return Err(ConfigError::InvalidParameter("at least one trial is required".into()).into());
    }
    let analytic = total_leak_probability(n, m, r, x)?.value();

    let config = SessionConfig::new(n, m, x, 16, derive_seed(seed, LABEL_REFERENCE, 0));
    let session = run_dissemination(init_session(&config, &vec![DataBlock::default(); n])?, None);
    let unmaskable: Vec<u64> = (0..n)
        .map(|p| simulate_coalition(&session, &BTreeSet::from([p])).len() as u64)
        .collect();

    let (sum, sum_sq) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LABEL_TRIAL, t));
            let forms = rng.random_range(0..n) < r;
            let compromised = rng.random_range(0..m);
            let selected = select_ttp(m, rng.next_u64()).expect("m >= 1");
            if !(forms && compromised == selected) {
                return (0u64, 0u128);
            }
            let count: u64 = rand::seq::index::sample(&mut rng, n, r)
                .iter()
                .map(|p| unmaskable[p])
                .sum();
            (count, u128::from(count) * u128::from(count))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    let total = (n * x) as f64;
    let t = trials as f64;
    let empirical = sum as f64 / (t * total);
    let variance = if trials > 1 {
        ((sum_sq as f64 / (total * total) - t * empirical * empirical) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    let std_error = (variance / t).sqrt();
    Ok(LeakEstimate {
        analytic,
        empirical,
        std_error,
        ci_halfwidth: Z_95 * std_error,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissemination::run_dissemination;

    fn session(n: usize, x: usize, rounds: usize, seed: u64) -> SessionState {
        let config = SessionConfig::new(n, 1, x, 16, seed);
        let blocks: Vec<DataBlock> = (0..n).map(|i| DataBlock::new(vec![i as u64])).collect();
        run_dissemination(init_session(&config, &blocks).unwrap(), Some(rounds))
    }

    #[test]
    fn party_malicious_is_one_over_n() {
        assert_eq!(p_party_malicious(4).unwrap().value(), 0.25);
        assert_eq!(p_party_malicious(1).unwrap().value(), 1.0);
        assert_eq!(p_party_malicious(10).unwrap().value(), 0.1);
        assert!(p_party_malicious(0).is_err());
    }

    #[test]
    fn decrypt_fraction() {
        assert_eq!(single_party_decrypt_fraction(4, 16).unwrap().value(), 0.25);
        assert_eq!(single_party_decrypt_fraction(7, 7).unwrap(), Probability::ONE);
        assert_eq!(single_party_decrypt_fraction(4, 40).unwrap().value(), 0.1);
        assert!(single_party_decrypt_fraction(0, 0).is_err());
        assert!(single_party_decrypt_fraction(5, 4).is_err());
    }

    #[test]
    fn total_leak_values() {
        assert_eq!(total_leak_probability(4, 4, 1, 4).unwrap().value(), 0.015625);
        assert_eq!(total_leak_probability(7, 1, 7, 3).unwrap().value(), 1.0);
        assert_eq!(total_leak_probability(10, 4, 1, 4).unwrap().value(), 0.0025);
        assert_eq!(
            total_leak_probability(3, 4, 4, 4),
            Err(ConfigError::CoalitionTooLarge { r: 4, n: 3 })
        );
        assert_eq!(total_leak_probability(3, 0, 1, 4), Err(ConfigError::NoTtp));
    }

    #[test]
    fn single_party_formula_factorizes_exactly() {
        for n in 1..60 {
            for m in 1..6 {
                for x in 1..6 {
                    let product = p_party_malicious(n).unwrap()
                        * single_party_decrypt_fraction(x, n * x).unwrap()
                        * Probability::new(1, m as u64);
                    assert_eq!(total_leak_probability(n, m, 1, x).unwrap(), product);
                    assert_eq!(product, Probability::new(1, (m * n * n) as u64));
                }
            }
        }
    }

    #[test]
    fn curve_shape() {
        let curve = leak_curve(3, 50, 4, 4, 1).unwrap();
        assert_eq!(curve.len(), 48);
        assert_eq!(curve[0].1, Probability::new(1, 36));
        assert_eq!(curve[1].1.value(), 0.015625);
        assert_eq!(curve.last().unwrap().1.value(), 1e-4);
        assert!(curve.windows(2).all(|w| w[0].1 > w[1].1));
        for (n, p) in leak_curve(3, 30, 1, 9, 1).unwrap() {
            assert_eq!(p, Probability::new(1, (n * n) as u64));
        }
        assert_eq!(leak_curve(2, 10, 4, 4, 1), Err(ConfigError::TooFewParties(2)));
    }

    #[test]
    fn empty_coalition_learns_nothing() {
        let s = session(4, 4, 4, 1);
        assert!(simulate_coalition(&s, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn full_coalition_learns_everything() {
        let s = session(5, 3, 5, 2);
        let all: BTreeSet<usize> = (0..5).collect();
        assert_eq!(simulate_coalition(&s, &all).len(), 15);
    }

    #[test]
    fn coalition_learns_exactly_its_own_packets() {
        let s = session(4, 4, 4, 3);
        let got = simulate_coalition(&s, &BTreeSet::from([1, 3]));
        let want: BTreeSet<PacketKey> = [1, 3]
            .iter()
            .flat_map(|&p| {
                let tag = s.parties()[p].block_tag();
                (0..4).map(move |i| (tag, i))
            })
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn model_never_holds_outside_functions() {
        let s = session(6, 2, 6, 4);
        let model = AdversaryModel::observe(&s, &BTreeSet::from([0, 5]), Some(1));
        let ids: BTreeSet<usize> = model.functions().map(|f| f.id).collect();
        let expected: BTreeSet<usize> = [0, 5].iter().map(|&p| s.parties()[p].drawn_function().id).collect();
        assert_eq!(ids, expected);
        assert_eq!(model.ttp_compromised(), Some(1));
    }

    #[test]
    fn no_shuffle_means_full_linkage() {
        let s = session(5, 4, 0, 5);
        let report = simulate_malicious_ttp(&s);
        assert_eq!(report.max_posterior, 1.0);
        for b in &report.blocks {
            let origin = s.parties().iter().find(|p| p.block_tag() == b.block_tag).unwrap().party_id();
            assert_eq!(b.posterior[origin], 1.0);
        }
    }

    #[test]
    fn posteriors_are_normalized() {
        for rounds in [0, 1, 3] {
            let report = simulate_malicious_ttp(&session(5, 4, rounds, 6));
            for b in &report.blocks {
                assert!((b.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        // Above the enumeration limit the independent fallback applies.
        let report = simulate_malicious_ttp(&session(10, 2, 0, 7));
        assert_eq!(report.blocks.len(), 10);
        for b in &report.blocks {
            assert!((b.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_rows_are_distributions() {
        for rounds in 0..4 {
            for row in kernel_power(4, rounds) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_trial_is_deterministic() {
        let a = monte_carlo_leak(4, 4, 1, 4, 1, 99).unwrap();
        assert_eq!(a, monte_carlo_leak(4, 4, 1, 4, 1, 99).unwrap());
        assert!(a.empirical == 0.0 || a.empirical == 0.25);
        assert_eq!(a.ci_halfwidth, 0.0);
    }

    #[test]
    fn degenerate_gates_give_certain_leak() {
        let est = monte_carlo_leak(5, 1, 5, 3, 2_000, 1).unwrap();
        assert_eq!(est.empirical, 1.0);
        assert_eq!(est.analytic, 1.0);
    }

    #[test]
    fn estimator_rejects_bad_parameters() {
        assert!(monte_carlo_leak(2, 1, 1, 1, 10, 0).is_err());
        assert!(monte_carlo_leak(4, 1, 5, 1, 10, 0).is_err());
        assert!(monte_carlo_leak(4, 1, 1, 1, 0, 0).is_err());
    }

    #[test]
    fn estimate_converges_to_the_formula() {
        let est = monte_carlo_leak(4, 4, 1, 4, 1_000_000, 2024).unwrap();
        assert!((est.empirical - 0.015625).abs() < 0.0005, "{est:?}");
        assert!(est.deviation_in_std_errors() < 3.0, "{est:?}");
    }
}
