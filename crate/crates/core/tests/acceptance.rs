//! Acceptance gate. Runs every criterion in order, prints one PASS/FAIL line
//! each and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use encrypto_core::dissemination::shuffle_round;
use encrypto_core::harness::bus::{Endpoint, Message};
use encrypto_core::harness::config::{validate_config, AggregateKind, RawConfig};
use encrypto_core::harness::{run_protocol_detailed, Outcome, Transcript};
use encrypto_core::maskpool::{build_pool, decrypt_packet, encrypt_packet, trial_decrypt, EncryptedPacket, Packet};
use encrypto_core::seed::digest64;
use encrypto_core::threat::{linkability, TtpObservation};
use encrypto_core::ttp::combine_seeds;
use encrypto_core::{
    depacketize, init_session, leak_curve, monte_carlo_leak, packetize, run_dissemination, run_protocol,
    select_ttp, simulate_coalition, total_leak_probability, ConfigError, DataBlock, Probability, SessionConfig,
};
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("{what} took {took:.2?}, limit {limit:?}"))?;
    Ok(took)
}

/// Aggregate computed directly on the plaintext inputs.
fn plaintext_aggregate(blocks: &[DataBlock], kind: AggregateKind) -> Vec<u64> {
    let width = blocks[0].values.len();
    (0..width)
        .map(|c| {
            let column = blocks.iter().map(|b| b.values[c]);
            match kind {
                AggregateKind::Sum => column.sum(),
                AggregateKind::Mean => (column.map(u128::from).sum::<u128>() / blocks.len() as u128) as u64,
                AggregateKind::Min => column.min().unwrap(),
                AggregateKind::Max => column.max().unwrap(),
            }
        })
        .collect()
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0001);
    let mut per_kind = BTreeMap::new();
    for session in 0..1000 {
        let n = rng.random_range(3..=12);
        let x = rng.random_range(1..=8);
        let kind = AggregateKind::ALL[session % 4];
        let packet_size = rng.random_range(8usize.div_ceil(x)..=48);
        let capacity = x * packet_size;
        let max_width = (capacity - 8) / 8;
        let mut config = SessionConfig::new(n, rng.random_range(1..=5), x, packet_size, rng.next_u64())
            .with_aggregate(kind)
            .with_pool_size(rng.random_range(n..=2 * n));
        if rng.random_bool(0.5) {
            config = config.with_rounds(rng.random_range(0..=n + 2));
        }
        let width = if max_width == 0 { 0 } else { rng.random_range(1..=max_width.min(16)) };
        let blocks: Vec<DataBlock> = (0..n)
            .map(|_| DataBlock::new((0..width).map(|_| rng.random_range(0..1u64 << 56)).collect()))
            .collect();
        let t = run_protocol(&config, &blocks).map_err(|e| format!("session {session}: {e}"))?;
        let got = match &t.outcome {
            Outcome::Completed { result } => result,
            Outcome::Aborted { step, error } => return Err(format!("session {session} aborted at {step}: {error}")),
        };
        let want = if width == 0 { Vec::new() } else { plaintext_aggregate(&blocks, kind) };
        ensure(got.values == want && got.n_blocks == n && got.aggregate_kind == kind, || {
            format!("session {session} ({config:?}): {:?} != {want:?}", got.values)
        })?;
        *per_kind.entry(kind.name()).or_insert(0) += 1;
    }
    let took = within(Duration::from_secs(30), start, "1000 sessions")?;
    Ok(format!("1000/1000 sessions exact {per_kind:?} in {took:.2?}"))
}

fn analytic_checks() -> Verdict {
    let p = total_leak_probability(4, 4, 1, 4).map_err(|e| e.to_string())?;
    ensure(p.value() == 0.015625 && p.ratio() == Ratio::new(1, 64), || format!("(4,4,1,4) gave {p:?}"))?;
    for n in 3..=50 {
        for x in 1..=8 {
            let p = total_leak_probability(n, 1, n, x).map_err(|e| e.to_string())?;
            ensure(p == Probability::ONE && p.value() == 1.0, || format!("(n={n},1,{n},{x}) gave {p:?}"))?;
        }
    }
    let curve = leak_curve(3, 50, 4, 4, 1).map_err(|e| e.to_string())?;
    ensure(curve.len() == 48, || format!("{} points", curve.len()))?;
    for (n, p) in &curve {
        let n = *n as u64;
        ensure(p.ratio() == Ratio::new(1, 4 * n * n), || format!("n={n}: {p:?} is not 1/(4n^2)"))?;
    }
    ensure(curve.windows(2).all(|w| w[1].1 < w[0].1), || "curve is not strictly decreasing".into())?;
    let last = curve.last().unwrap().1;
    ensure(last.value() == 1e-4 && last.ratio() == Ratio::new(1, 10_000), || format!("last point {last:?}"))?;
    Ok("(4,4,1,4) = 0.015625, (n,1,n,X) = 1, curve 3..50 strictly decreasing to 0.0001".into())
}

fn monte_carlo_agreement() -> Verdict {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    for n in [3, 4, 6, 8, 10] {
        for m in [1, 4] {
            for r in [1, 2] {
                let seed = 0x6d63_0000 ^ ((n as u64) << 16) ^ ((m as u64) << 8) ^ r as u64;
                let est = monte_carlo_leak(n, m, r, 4, 1_000_000, seed).map_err(|e| e.to_string())?;
                let z = est.deviation_in_std_errors();
                ensure(z <= 3.0, || {
                    format!("n={n} m={m} r={r}: empirical {} vs {} is {z:.2} SE", est.empirical, est.analytic)
                })?;
                if z >= worst.0 {
                    worst = (z, format!("n={n} m={m} r={r}"));
                }
            }
        }
    }
    let took = within(Duration::from_secs(60), start, "20 x 10^6 trials")?;
    Ok(format!("20 grid points within 3 SE (worst {:.2} SE at {}) in {took:.2?}", worst.0, worst.1))
}

fn coalition_exactness() -> Verdict {
    let mut checked = 0;
    for n in [4, 5, 6] {
        for seed in 0..3u64 {
            let config = SessionConfig::new(n, 1, 4, 24, 0xc0a1 ^ (seed << 8) ^ n as u64);
            let blocks: Vec<DataBlock> = (0..n).map(|i| DataBlock::new(vec![i as u64, 7])).collect();
            let session = run_dissemination(init_session(&config, &blocks).map_err(|e| e.to_string())?, None);
            for mask in 0u32..1 << n {
                let coalition: BTreeSet<usize> = (0..n).filter(|p| mask & (1 << p) != 0).collect();
                let origin_tags: BTreeSet<u64> = coalition.iter().map(|&p| session.parties()[p].block_tag()).collect();
                let expected: BTreeSet<(u64, u32)> = session
                    .holdings()
                    .map(|(_, e)| e.key())
                    .filter(|(tag, _)| origin_tags.contains(tag))
                    .collect();
                ensure(expected.len() == 4 * coalition.len(), || format!("n={n}: origin oracle lost packets"))?;
                let got = simulate_coalition(&session, &coalition);
                ensure(got == expected, || format!("n={n} seed={seed} coalition {coalition:?}: {got:?}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} coalitions over n=4,5,6 decrypt exactly their own packets"))
}

fn unlinkability() -> Verdict {
    // Structure: the only payload a third party receives is a packet with
    // these four fields, none of which names a party.
    let fields = |v: &serde_json::Value| -> BTreeSet<String> { v.as_object().unwrap().keys().cloned().collect() };
    let config = SessionConfig::new(5, 3, 4, 16, 11).with_rounds(5);
    let blocks: Vec<DataBlock> = (0..5).map(|i| DataBlock::new(vec![i])).collect();
    let run = run_protocol_detailed(&config, &blocks, None).map_err(|e| e.to_string())?;
    ensure(run.selected_ttp.is_some_and(|t| t < 3), || "no third party selected".into())?;
    let expected_fields: BTreeSet<String> =
        ["block_tag", "checksum", "masked_payload", "packet_index"].map(String::from).into();
    let mut to_ttp = 0;
    for env in run.bus.delivered() {
        if let Message::Packet(p) = &env.message {
            let v = serde_json::to_value(p).unwrap();
            ensure(fields(&v) == expected_fields, || format!("packet fields {:?}", fields(&v)))?;
            if matches!(env.to, Endpoint::Ttp(_)) {
                to_ttp += 1;
            }
        }
    }
    ensure(to_ttp == 20, || format!("{to_ttp} packets reached a third party"))?;
    ensure(run.ttp_arrivals.len() == 20, || "not every packet reached the third party".into())?;
    let mut tampered = serde_json::to_value(&run.ttp_arrivals[0].1).unwrap();
    tampered["party_id"] = 0.into();
    ensure(serde_json::from_value::<EncryptedPacket>(tampered).is_err(), || {
        "a packet with a party field deserialized".into()
    })?;

    // Statistics over 10^4 sessions.
    let sessions = 10_000u64;
    let (sum_max, worst, hits) = (0..sessions)
        .into_par_iter()
        .map(|s| {
            let config = SessionConfig::new(5, 2, 3, 16, 0x11a0_0000 + s).with_rounds(5);
            let blocks: Vec<DataBlock> = (0..5).map(|i| DataBlock::new(vec![i * 3 + s])).collect();
            let run = run_protocol_detailed(&config, &blocks, None).expect("valid config");
            assert!(matches!(run.transcript.outcome, Outcome::Completed { .. }));
            let obs = TtpObservation {
                parties: 5,
                rounds: 5,
                arrivals: run.ttp_arrivals.clone(),
            };
            let report = linkability(&obs);
            // Independent guesser: the party that forwarded most of a block.
            let origins: BTreeMap<u64, usize> = run
                .session
                .as_ref()
                .unwrap()
                .parties()
                .iter()
                .map(|p| (p.block_tag(), p.party_id()))
                .collect();
            let mut votes: BTreeMap<u64, [u32; 5]> = BTreeMap::new();
            for (from, e) in &obs.arrivals {
                votes.entry(e.block_tag).or_default()[*from] += 1;
            }
            let hits = votes
                .iter()
                .filter(|(tag, v)| {
                    let guess = (0..5).max_by_key(|&p| (v[p], std::cmp::Reverse(p))).unwrap();
                    origins[tag] == guess
                })
                .count() as u64;
            (report.max_posterior, (report.max_posterior - 0.2).abs(), hits)
        })
        .reduce(|| (0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1.max(b.1), a.2 + b.2));
    let mean = sum_max / sessions as f64;
    ensure((mean - 0.2).abs() <= 0.05, || format!("mean max posterior {mean}"))?;
    ensure(worst <= 0.05, || format!("a session's max posterior is {worst} away from 0.2"))?;
    let accuracy = hits as f64 / (5 * sessions) as f64;
    ensure((accuracy - 0.2).abs() <= 0.05, || format!("plurality guess accuracy {accuracy}"))?;
    Ok(format!(
        "packets carry only {expected_fields:?}; mean max posterior {mean:.6}, plurality guess accuracy {accuracy:.4}"
    ))
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

fn runtime_selection() -> Verdict {
    let m = 4;
    let seeds = 100_000u64;
    let mut counts = vec![0u64; m];
    for s in 0..seeds {
        let a = select_ttp(m, s).map_err(|e| e.to_string())?;
        ensure(a == select_ttp(m, s).unwrap(), || format!("seed {s} is not deterministic"))?;
        counts[a] += 1;
    }
    let p_direct = chi_square_p(&counts);
    ensure(p_direct > 0.001, || format!("direct seeds {counts:?}, p = {p_direct}"))?;

    let mut worst_marginal = 1.0f64;
    for fixed in [0u64, 42, u64::MAX] {
        let mut rng = ChaCha8Rng::seed_from_u64(fixed ^ 0x5e1e);
        let mut counts = vec![0u64; m];
        for _ in 0..seeds {
            let party_seeds = [fixed, rng.next_u64(), rng.next_u64(), rng.next_u64()];
            counts[select_ttp(m, combine_seeds(&party_seeds, 9)).unwrap()] += 1;
        }
        let p = chi_square_p(&counts);
        ensure(p > 0.001, || format!("party 0 fixed to {fixed}: {counts:?}, p = {p}"))?;
        worst_marginal = worst_marginal.min(p);
    }
    Ok(format!(
        "uniform over m=4 (p = {p_direct:.4}), deterministic, marginal with one seed fixed uniform (min p = {worst_marginal:.4})"
    ))
}

const PROPERTY_CASES: u32 = 10_000;

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn small_config() -> impl Strategy<Value = (SessionConfig, Vec<DataBlock>)> {
    (3usize..=7, 1usize..=4, 16usize..=32, any::<u64>(), 0usize..4, 1usize..=3).prop_flat_map(
        |(n, x, size, seed, kind, m)| {
            let width = ((x * size - 8) / 8).min(4);
            let config = SessionConfig::new(n, m, x, size, seed).with_aggregate(AggregateKind::ALL[kind]);
            let blocks = proptest::collection::vec(
                proptest::collection::vec(0u64..1 << 40, width).prop_map(DataBlock::new),
                n,
            );
            (Just(config), blocks)
        },
    )
}

fn property_suites() -> Verdict {
    run_property(
        "encrypt/decrypt",
        (1usize..12, any::<u64>(), any::<u64>(), any::<u32>(), proptest::collection::vec(any::<u8>(), 0..64)),
        |(size, seed, tag, index, payload)| {
            let pool = build_pool(size, seed).unwrap();
            let f = &pool.functions()[(seed % size as u64) as usize];
            let packet = Packet::new(tag, index, payload);
            let e = encrypt_packet(f, &packet);
            prop_assert_eq!(&decrypt_packet(f, &e).unwrap(), &packet);
            let (id, recovered) = trial_decrypt(&pool, &e).unwrap();
            prop_assert_eq!(&recovered, &packet);
            prop_assert_eq!(decrypt_packet(&pool.functions()[id], &e).unwrap(), packet);
            Ok(())
        },
    )?;

    run_property(
        "packetize/depacketize",
        (1usize..=8, 1usize..=40, any::<u64>(), proptest::collection::vec(any::<u64>(), 0..40))
            .prop_filter("room for the length prefix", |(x, size, ..)| x * size >= 8),
        |(x, size, tag, values)| {
            let fit = DataBlock::max_values(x * size);
            let block = DataBlock::new(values.into_iter().take(fit).collect());
            let packets = packetize(&block, x, size, tag).unwrap();
            prop_assert_eq!(packets.len(), x);
            prop_assert!(packets.iter().all(|p| p.payload().len() == size && p.block_tag() == tag));
            prop_assert_eq!(depacketize(&packets).unwrap(), block);
            Ok(())
        },
    )?;

    run_property("per-round conservation", (small_config(), 1usize..=6), |((config, blocks), rounds)| {
        let mut state = init_session(&config, &blocks).unwrap();
        let mut before = state.packet_multiset();
        before.sort();
        for _ in 0..rounds {
            state = shuffle_round(state);
            let mut after = state.packet_multiset();
            after.sort();
            prop_assert_eq!(after.len(), config.n * config.packets_per_party);
            prop_assert_eq!(&after, &before);
        }
        Ok(())
    })?;

    run_property("zero-round identity", small_config(), |(config, blocks)| {
        let state = init_session(&config, &blocks).unwrap();
        let held: Vec<Vec<EncryptedPacket>> = state.parties().iter().map(|p| p.held().to_vec()).collect();
        let after = run_dissemination(state, Some(0));
        prop_assert_eq!(after.round(), 0);
        for (party, own) in after.parties().iter().zip(&held) {
            prop_assert_eq!(party.held(), own.as_slice());
            prop_assert!(party.held().iter().all(|e| e.block_tag == party.block_tag()));
        }
        Ok(())
    })?;

    run_property("transcript replay", small_config(), |(config, blocks)| {
        let first = run_protocol(&config, &blocks).unwrap();
        let second = run_protocol(&config, &blocks).unwrap();
        prop_assert_eq!(first.transcript_digest, second.transcript_digest);
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(digest64(&first.canonical_bytes()), first.transcript_digest);
        let json = serde_json::to_string(&first).unwrap();
        let back: Transcript = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, first);
        Ok(())
    })?;

    Ok(format!("5 suites x {PROPERTY_CASES} cases, no failures"))
}

fn assumption_enforcement() -> Verdict {
    let cites = |e: ConfigError, n: u8| -> Result<(), String> {
        ensure(e.assumption() == Some(n) && e.to_string().contains(&format!("assumption {n}")), || {
            format!("expected assumption {n}, got: {e}")
        })
    };
    let two = SessionConfig::new(2, 1, 2, 16, 1).validate().err().ok_or("n=2 accepted")?;
    cites(two, 7)?;
    let small_pool = SessionConfig::new(5, 1, 2, 16, 1).with_pool_size(4).validate().err().ok_or("pool 4 < 5 accepted")?;
    cites(small_pool, 6)?;
    let raw = RawConfig::parse(
        "n = 3\nm = 1\npackets_per_party = 2\npacket_size = [16, 16, 32]\naggregate = \"sum\"\nmaster_seed = 1\n",
    )
    .map_err(|e| e.to_string())?;
    cites(validate_config(&raw).err().ok_or("ragged packet sizes accepted")?, 9)?;
    let two_raw = RawConfig::parse("n = 2\nm = 1\npackets_per_party = 2\npacket_size = 16\naggregate = \"sum\"\nmaster_seed = 1\n")
        .map_err(|e| e.to_string())?;
    cites(validate_config(&two_raw).err().ok_or("n=2 file accepted")?, 7)?;
    Ok("n=2 -> assumption 7, pool_size < n -> assumption 6, ragged packet_size -> assumption 9".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("analytic formula", analytic_checks),
        ("monte-carlo agreement", monte_carlo_agreement),
        ("coalition exactness", coalition_exactness),
        ("unlinkability", unlinkability),
        ("runtime ttp selection", runtime_selection),
        ("property suites", property_suites),
        ("assumption enforcement", assumption_enforcement),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  criterion {} {name}: {detail} [{took:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {} {name}: {why} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
