//! Property tests for the contracts the rest of the system leans on:
//! environment invariants, normalization identities, mixer monotonicity,
//! serialization roundtrips, and the loop-gain algebra.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use marlab::datastore::{
    load_dataset, write_dataset, DataSource, DatasetHeader, ReplayBuffer, TransitionRecord,
    DATASET_VERSION,
};
use marlab::diffmath::{Array, Checkpoint, Var};
use marlab::envsim::{coop_bandit, make_env, JointAction};
use marlab::policyext::ExtractMethod;
use marlab::runner::{MetricsRow, SweepAxes, SweepSpec};
use marlab::stability::{loop_gain, normalized_score};
use marlab::valuedecomp::{CriticDims, CriticStack, Decomp, MixerNet, QInputs};
use marlab::valuelearn::{expectile_loss, svn_stats, svn_td_loss, ValueMethod};
use marlab::Real;

fn finite_real() -> impl Strategy<Value = Real> {
    (-1e3f64..1e3).prop_map(|v| v as Real)
}

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

proptest! {
    /// Reward surface: strictly positive, capped by the higher peak, and
    /// symmetric under swapping the two agents.
    #[test]
    fn coop_bandit_reward_bounded_and_symmetric(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let r = coop_bandit::reward(a, b);
        prop_assert!(r > 0.0 && r <= 1.2, "reward {r}");
        prop_assert_eq!(r, coop_bandit::reward(b, a));
    }

    /// Whatever both agents do, an episode's undiscounted return is one of
    /// the four payoff-matrix entries reachable from the start state.
    #[test]
    fn two_step_returns_live_in_the_payoff_set(
        seed in any::<u64>(),
        acts in proptest::collection::vec((0usize..2, 0usize..2), 2),
    ) {
        let mut env = make_env("two_step").unwrap();
        env.reset(seed);
        let mut total = 0.0;
        for (a, b) in acts {
            let r = env.step(&JointAction::Discrete(vec![a, b])).unwrap();
            total += r.team_reward;
            if r.done {
                break;
            }
        }
        prop_assert!(
            [7.0, 0.0, 1.0, 8.0].contains(&total),
            "return {total} outside the payoff set"
        );
    }

    /// Team reward is minus a mean of distances: never positive, and zero
    /// only with every landmark covered exactly.
    #[test]
    fn spread_rewards_are_nonpositive(
        seed in any::<u64>(),
        acts in proptest::collection::vec(
            proptest::collection::vec(-2.0f64..2.0, 6), 1..=4,
        ),
    ) {
        let mut env = make_env("spread_lite").unwrap();
        env.reset(seed);
        for flat in acts {
            let joint = JointAction::Continuous(
                flat.chunks(2).map(|c| c.to_vec()).collect(),
            );
            let r = env.step(&joint).unwrap();
            prop_assert!(r.team_reward <= 0.0, "reward {}", r.team_reward);
            if r.done {
                break;
            }
        }
    }

    /// Environments are deterministic: same seed and action sequence, same
    /// trajectory, on a fresh instance.
    #[test]
    fn environments_are_deterministic(name_idx in 0usize..3, seed in any::<u64>(), action_seed in any::<u64>()) {
        let name = ["two_step", "coop_bandit", "spread_lite"][name_idx];
        let run = |seed: u64, action_seed: u64| {
            let mut env = make_env(name).unwrap();
            let spec = env.spec().clone();
            let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
            let (state, _obs) = env.reset(seed);
            let mut trace = vec![state];
            loop {
                let act = match &spec.action_space {
                    marlab::envsim::ActionSpace::Discrete { n } => JointAction::Discrete(
                        (0..spec.num_agents).map(|_| rng.gen_range(0..*n)).collect(),
                    ),
                    marlab::envsim::ActionSpace::Continuous { dim, low, high } => {
                        JointAction::Continuous(
                            (0..spec.num_agents)
                                .map(|_| (0..*dim).map(|_| rng.gen_range(*low..*high)).collect())
                                .collect(),
                        )
                    }
                };
                let r = env.step(&act).unwrap();
                trace.push(r.next_state.clone());
                trace.push(vec![r.team_reward]);
                if r.done {
                    return trace;
                }
            }
        };
        prop_assert_eq!(run(seed, action_seed), run(seed, action_seed));
    }
}

// ---------------------------------------------------------------------------
// Normalization and value-loss identities
// ---------------------------------------------------------------------------

proptest! {
    /// The normalized TD loss is exactly the plain MSE rescaled by 1/sigma^2,
    /// in value and gradient.
    #[test]
    fn svn_loss_is_scaled_mse(
        q in proptest::collection::vec(-100.0f64..100.0, 2..32),
        shift in -10.0f64..10.0,
    ) {
        let n = q.len();
        let targets: Vec<Real> = q.iter().map(|v| v + shift).collect();
        let qv = Var::leaf(Array::new(vec![n, 1], q.clone()), true);
        let yv = Var::constant(Array::new(vec![n, 1], targets));
        let stats = svn_stats(&qv.value_clone(), 1e-6);

        let normalized = svn_td_loss(&qv, &yv, &stats);
        normalized.backward().unwrap();
        let grad_norm = qv.grad();

        let qp = Var::leaf(Array::new(vec![n, 1], q), true);
        let yp = yv.clone();
        let plain = qp.sub(&yp).square().mean();
        plain.backward().unwrap();
        let grad_plain = qp.grad();

        let s2 = stats.sigma_q * stats.sigma_q;
        let lv = normalized.value_clone().as_slice()[0];
        let pv = plain.value_clone().as_slice()[0];
        prop_assert!((lv * s2 - pv).abs() <= 1e-9 * pv.abs().max(1.0), "{lv} * {s2} vs {pv}");
        for (gn, gp) in grad_norm.as_slice().iter().zip(grad_plain.as_slice()) {
            prop_assert!(
                (gn * s2 - gp).abs() <= 1e-9 * gp.abs().max(1e-12),
                "{gn} * {s2} vs {gp}"
            );
        }
    }

    /// sigma never collapses below epsilon, even on constant batches.
    #[test]
    fn svn_sigma_has_epsilon_floor(v in -1e6f64..1e6, n in 1usize..16) {
        let stats = svn_stats(&Array::full(vec![n, 1], v), 1e-6);
        prop_assert!(stats.sigma_q >= 1e-6);
        prop_assert!((stats.mu_q - v).abs() <= 1e-9 * v.abs().max(1.0));
    }

    /// At tau = 1/2 the expectile loss is exactly half the squared loss.
    #[test]
    fn expectile_at_half_is_half_mse(diffs in proptest::collection::vec(-50.0f64..50.0, 1..24)) {
        let n = diffs.len();
        let d = Var::constant(Array::new(vec![n, 1], diffs.clone()));
        let expectile = expectile_loss(&d, 0.5).value_clone().as_slice()[0];
        let half_mse = 0.5 * diffs.iter().map(|u| u * u).sum::<Real>() / n as Real;
        prop_assert!(
            (expectile - half_mse).abs() <= 1e-12 * half_mse.max(1.0),
            "{expectile} vs {half_mse}"
        );
    }
}

// ---------------------------------------------------------------------------
// Decomposition structure
// ---------------------------------------------------------------------------

fn tiny_dims() -> CriticDims {
    CriticDims { num_agents: 2, obs_dim: 3, state_dim: 3, act_width: 2 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Finite-difference mixer slopes stay nonnegative for arbitrary weights
    /// and probe points: |W| weight generation makes this structural.
    #[test]
    fn mixer_is_monotone_in_every_utility(
        net_seed in any::<u64>(),
        probe_seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(net_seed);
        let mixer = MixerNet::new(2, 3, 4, 8, &mut rng).unwrap();
        let mut probe = ChaCha8Rng::seed_from_u64(probe_seed);
        let state: Vec<Real> = (0..3).map(|_| probe.gen_range(-2.0..2.0)).collect();
        let utilities: Vec<Real> = (0..2).map(|_| probe.gen_range(-5.0..5.0)).collect();
        let eval = |u: &[Real]| {
            let uv = Var::constant(Array::new(vec![1, 2], u.to_vec()));
            let sv = Var::constant(Array::new(vec![1, 3], state.clone()));
            mixer.forward(&uv, &sv).unwrap().value_clone().as_slice()[0]
        };
        let h = 1e-4;
        for a in 0..2 {
            let mut up = utilities.clone();
            up[a] += h;
            let mut down = utilities.clone();
            down[a] -= h;
            let slope = (eval(&up) - eval(&down)) / (2.0 * h);
            prop_assert!(slope >= -1e-6, "agent {a} slope {slope}");
        }
    }

    /// vdn is literally additive, and the pessimistic ensemble never exceeds
    /// either member.
    #[test]
    fn vdn_additivity_and_ensemble_pessimism(seed in any::<u64>(), data_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = CriticStack::new(Decomp::Vdn, tiny_dims(), &[4], 2, 4, &mut rng).unwrap();
        let mut d = ChaCha8Rng::seed_from_u64(data_seed);
        let batch = 3;
        let mk = |d: &mut ChaCha8Rng, cols: usize| {
            Array::new(vec![batch, cols], (0..batch * cols).map(|_| d.gen_range(-1.0..1.0)).collect())
        };
        let state = Var::constant(mk(&mut d, 3));
        let obs: Vec<Var<Real>> = (0..2).map(|_| Var::constant(mk(&mut d, 3))).collect();
        let act: Vec<Var<Real>> = (0..2).map(|_| Var::constant(mk(&mut d, 2))).collect();
        let inputs = QInputs { state: &state, obs: &obs, act: &act };

        for member in 0..2 {
            let qs = stack.agent_qs(member, &inputs, false).unwrap();
            let qt = stack.q_tot(member, &inputs, false).unwrap().value_clone();
            for b in 0..batch {
                let total: Real = qs.iter().map(|q| q.value_clone().get2(b, 0)).sum();
                prop_assert!((qt.get2(b, 0) - total).abs() <= 1e-12, "additivity");
            }
        }
        let min_q = stack.min_ensemble_q_tot(&inputs, false).unwrap().value_clone();
        for member in 0..2 {
            let qt = stack.q_tot(member, &inputs, false).unwrap().value_clone();
            for b in 0..batch {
                prop_assert!(min_q.get2(b, 0) <= qt.get2(b, 0) + 1e-15, "pessimism");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization roundtrips
// ---------------------------------------------------------------------------

/// A record shaped for the coop_bandit spec (state `[1]`, obs `[2]` each,
/// 1-D continuous actions in bounds) so the validating loader accepts it.
fn arbitrary_record(episode_id: u64, t: usize, len: usize, seed: u64) -> TransitionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |n: usize| -> Vec<Real> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let done = t + 1 == len;
    TransitionRecord {
        episode_id,
        t,
        state: v(1),
        obs: vec![v(2), v(2)],
        actions: JointAction::Continuous(vec![v(1), v(1)]),
        reward: 2.0 * v(1)[0],
        next_state: v(1),
        next_obs: vec![v(2), v(2)],
        next_actions: if done {
            None
        } else {
            Some(JointAction::Continuous(vec![v(1), v(1)]))
        },
        done,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Datasets survive the write/load cycle bit-for-bit, floats included,
    /// with header stats the validating loader agrees with.
    #[test]
    fn dataset_file_roundtrip(
        seed in any::<u64>(),
        episode_lens in proptest::collection::vec(1usize..4, 1..4),
    ) {
        let mut records: Vec<TransitionRecord> = Vec::new();
        let mut returns: Vec<Real> = Vec::new();
        for (ep, len) in episode_lens.iter().enumerate() {
            let mut total = 0.0;
            for t in 0..*len {
                let r = arbitrary_record(ep as u64, t, *len, seed ^ ((ep * 7 + t) as u64));
                total += r.reward;
                records.push(r);
            }
            returns.push(total);
        }
        let header = DatasetHeader {
            format_version: DATASET_VERSION,
            env: "coop_bandit".into(),
            env_spec: make_env("coop_bandit").unwrap().spec().clone(),
            behavior: marlab::envsim::BehaviorKind::Mixture,
            num_episodes: episode_lens.len() as u64,
            num_records: records.len() as u64,
            seed,
            return_min: returns.iter().cloned().fold(Real::INFINITY, Real::min),
            return_mean: returns.iter().sum::<Real>() / returns.len() as Real,
            return_max: returns.iter().cloned().fold(Real::NEG_INFINITY, Real::max),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_dataset(&path, &header, &records).unwrap();
        let (h2, r2) = load_dataset(&path).unwrap();
        prop_assert_eq!(h2, header);
        prop_assert_eq!(r2, records);
    }

    /// Checkpoints restore parameter values exactly.
    #[test]
    fn checkpoint_roundtrip_is_exact(seed in any::<u64>(), n in 1usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let named: Vec<(String, Var<Real>)> = (0..3)
            .map(|i| {
                let data: Vec<Real> = (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect();
                (format!("p{i}"), Var::leaf(Array::new(vec![n], data), true))
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        Checkpoint::from_named(&named).save(&path).unwrap();

        let fresh: Vec<(String, Var<Real>)> = named
            .iter()
            .map(|(name, v)| (name.clone(), Var::leaf(Array::zeros(v.shape()), true)))
            .collect();
        Checkpoint::load(&path).unwrap().apply(&fresh).unwrap();
        for ((_, a), (_, b)) in named.iter().zip(&fresh) {
            let (av, bv) = (a.value_clone(), b.value_clone());
            prop_assert_eq!(av.as_slice(), bv.as_slice());
        }
    }

    /// A metrics row survives the CSV encode/decode cycle.
    #[test]
    fn metrics_row_csv_roundtrip(
        step in 0u64..1_000_000,
        td_loss in finite_real(),
        q_mean in finite_real(),
        q_abs_mean in finite_real(),
        actor_loss in finite_real(),
        grad in finite_real(),
        opnorm in proptest::option::of(finite_real()),
        gain in proptest::option::of(finite_real()),
        eval in proptest::option::of((finite_real(), finite_real(), finite_real())),
        flag_bits in 0usize..8,
    ) {
        let names = ["value_scale_drift", "grad_blowup", "non_finite"];
        let flags: Vec<&str> = names
            .iter()
            .enumerate()
            .filter(|(i, _)| flag_bits & (1 << i) != 0)
            .map(|(_, n)| *n)
            .collect();
        let row = MetricsRow {
            step,
            td_loss,
            q_mean,
            q_abs_mean,
            actor_loss,
            grad_norm_total: grad,
            jacobian_opnorm: opnorm,
            loop_gain_svn: gain,
            eval_return_mean: eval.map(|e| e.0),
            eval_return_std: eval.map(|e| e.1),
            normalized_score: eval.map(|e| e.2),
            flags: flags.join(";"),
        };
        let parsed = MetricsRow::from_csv_line(&row.to_csv_line(), 2).unwrap();
        prop_assert_eq!(parsed, row);
    }
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The buffer never exceeds capacity, keeps the newest transitions, and
    /// reports pure-online provenance.
    #[test]
    fn replay_buffer_capacity_and_provenance(
        capacity in 1usize..16,
        episode_lens in proptest::collection::vec(1usize..5, 1..6),
    ) {
        let mut buffer = ReplayBuffer::new(capacity).unwrap();
        let mut total = 0usize;
        for (ep, len) in episode_lens.iter().enumerate() {
            let episode: Vec<TransitionRecord> = (0..*len)
                .map(|t| arbitrary_record(ep as u64, t, *len, (ep * 10 + t) as u64))
                .collect();
            buffer.push_rollout(episode, DataSource::Online);
            total += len;
            prop_assert!(buffer.len() <= capacity);
            prop_assert_eq!(buffer.len(), total.min(capacity));
        }
        prop_assert!(buffer.all_online());
    }
}

// ---------------------------------------------------------------------------
// Scores, loop gain, sweep naming
// ---------------------------------------------------------------------------

proptest! {
    /// The normalizer is the affine map sending scale_min -> 0 and
    /// scale_max -> 1; interpolation is linear in between.
    #[test]
    fn normalized_score_is_affine(t in 0.0f64..1.0) {
        let (lo, hi) = (895.37, 2124.15);
        let raw = lo + t * (hi - lo);
        let s = normalized_score("2ant", raw).unwrap();
        prop_assert!((s - t).abs() <= 1e-12, "score {s} vs t {t}");
    }

    /// Loop gain is linear in gamma, operator norm, and actor sensitivity,
    /// and inversely proportional to sigma.
    #[test]
    fn loop_gain_scaling_laws(
        op in 0.01f64..10.0,
        gamma in 0.01f64..1.0,
        sens in 0.01f64..10.0,
        sigma in 0.1f64..100.0,
    ) {
        let raw = loop_gain(op, gamma, sens, None);
        prop_assert!((raw - gamma * op * sens).abs() <= 1e-12 * raw.abs());
        let scaled = loop_gain(op, gamma, sens, Some(sigma));
        prop_assert!((scaled - raw / sigma).abs() <= 1e-12 * raw.abs().max(1.0));
        let doubled = loop_gain(2.0 * op, gamma, sens, Some(sigma));
        prop_assert!((doubled - 2.0 * scaled).abs() <= 1e-12 * doubled.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Sweep expansion is the full Cartesian product with unique,
    /// deterministic run names.
    #[test]
    fn sweep_expansion_covers_the_product(
        n_alpha in 1usize..4,
        n_seeds in 1usize..4,
        use_decomps in proptest::collection::vec(0usize..4, 1..4),
    ) {
        let decomps: Vec<Decomp> = {
            let all = [Decomp::Dec, Decomp::Vdn, Decomp::Mix, Decomp::Cen];
            let mut picked: Vec<Decomp> = use_decomps.iter().map(|&i| all[i]).collect();
            picked.sort_by_key(|d| format!("{d:?}"));
            picked.dedup();
            picked
        };
        let alphas: Vec<Real> = (0..n_alpha).map(|i| 0.1 * (i + 1) as Real).collect();
        let seeds: Vec<u64> = (0..n_seeds as u64).collect();
        let spec = SweepSpec {
            base: base_run_config(),
            axes: SweepAxes {
                decomp: Some(decomps.clone()),
                value_learning: Some(vec![ValueMethod::Td, ValueMethod::Sarsa]),
                extraction: Some(vec![ExtractMethod::Awr]),
                alpha: Some(alphas.clone()),
                seeds: Some(seeds.clone()),
            },
        };
        let runs = spec.expand().unwrap();
        prop_assert_eq!(runs.len(), decomps.len() * 2 * alphas.len() * seeds.len());
        let mut names: Vec<&String> = runs.iter().map(|(name, _)| name).collect();
        names.sort();
        names.dedup();
        prop_assert_eq!(names.len(), runs.len(), "duplicate run names");
    }
}

fn base_run_config() -> marlab::runner::RunConfig {
    marlab::runner::RunConfig {
        env: "two_step".into(),
        dataset: "unused.jsonl".into(),
        decomp: Decomp::Vdn,
        value_learning: ValueMethod::Td,
        extraction: ExtractMethod::Awr,
        alpha: 1.0,
        iql_tau: 0.7,
        gamma: 0.99,
        lr_actor: 3e-4,
        lr_critic: 3e-4,
        polyak_tau: 0.01,
        batch_size: 32,
        total_steps: 100,
        eval_every: 100,
        eval_episodes: 2,
        seed: 0,
        svn: true,
        actor_norm: true,
        hidden_sizes: vec![8],
        mixer_embed: 4,
        mixer_hyper_hidden: 8,
        online_steps: 0,
        online_buffer_capacity: 64,
        exploration_std: 0.1,
    }
}
