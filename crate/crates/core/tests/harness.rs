use std::path::Path;

use dnmd_core::envs::MessageCodec;
use dnmd_core::harness::{
    aggregate, checkpoint, evaluate, read_metrics, run_training, sweep, EvalOptions, LinkFailure, Policy, RunConfig,
    METRICS_FILE,
};

fn tiny(mode: &str, p: f64, steps: u64) -> RunConfig {
    let text = format!(
        "preset = pursuit-small\n\
         env.horizon = 40\n\
         agent.mode = {mode}\n\
         agent.p = {p}\n\
         train.steps = {steps}\n\
         train.batch_size = 8\n\
         train.eval_every = 200\n\
         train.eval_episodes = 2\n\
         train.eps_anneal = 300\n\
         train.buffer_capacity = 500\n\
         train.target_sync = 20\n"
    );
    RunConfig::parse(&text).unwrap()
}

fn metrics_bytes(dir: &Path) -> Vec<u8> {
    std::fs::read(dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn zero_steps_give_header_only_metrics() {
    let out = tempfile::tempdir().unwrap();
    let o = run_training(&tiny("dcc_md", 0.2, 0), out.path()).unwrap();
    assert!(o.rows.is_empty());
    assert_eq!(
        String::from_utf8(metrics_bytes(&o.run_dir)).unwrap(),
        "run_id,seed,mode,p,env,step,episodes_done,mean_return,catches,loss,eps,wallclock_s\n"
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny("dcc_md", 0.3, 600);
    let ra = run_training(&cfg, a.path()).unwrap();
    let rb = run_training(&cfg, b.path()).unwrap();
    assert_eq!(ra.rows.len(), 3);
    assert_eq!(metrics_bytes(&ra.run_dir), metrics_bytes(&rb.run_dir));
    // rerunning into the same directory replaces rather than appends
    let rc = run_training(&cfg, a.path()).unwrap();
    assert_eq!(metrics_bytes(&rc.run_dir), metrics_bytes(&rb.run_dir));
    assert_eq!(read_metrics(&ra.run_dir.join(METRICS_FILE)).unwrap(), ra.rows);
}

#[test]
fn seeds_change_the_run() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny("dcc", 0.0, 400);
    let a = run_training(&cfg, out.path()).unwrap();
    cfg.train.seed = 1;
    let b = run_training(&cfg, out.path()).unwrap();
    assert_ne!(a.rows[1].loss, b.rows[1].loss);
}

#[test]
fn zero_rate_dropout_matches_plain_communication() {
    let out = tempfile::tempdir().unwrap();
    let a = run_training(&tiny("dcc", 0.0, 600), out.path()).unwrap();
    let b = run_training(&tiny("dcc_md", 0.0, 600), out.path()).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!((x.loss, x.catches, x.mean_return), (y.loss, y.catches, y.mean_return));
    }
    let (_, pa) = checkpoint::load(&a.checkpoint_dir).unwrap();
    let (_, pb) = checkpoint::load(&b.checkpoint_dir).unwrap();
    match (pa, pb) {
        (Policy::Dqn { agents: x, .. }, Policy::Dqn { agents: y, .. }) => {
            for (p, q) in x.iter().zip(&y) {
                assert_eq!(p.net, q.net);
            }
        }
        _ => panic!("expected discrete policies"),
    }
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let out = tempfile::tempdir().unwrap();
    for mode in ["fdc", "dcc_md", "concat_md", "full_md"] {
        let cfg = tiny(mode, 0.2, 300);
        let o = run_training(&cfg, out.path()).unwrap();
        let (loaded_cfg, policy) = checkpoint::load(&o.checkpoint_dir).unwrap();
        assert_eq!(loaded_cfg, cfg);
        let s = evaluate(&policy, &cfg.env, &EvalOptions::greedy(2, dnmd_core::harness::train::train_eval_seed(cfg.train.seed))).unwrap();
        let last = o.rows.last().unwrap();
        assert_eq!((s.mean_catches, s.mean_return), (last.catches, last.mean_return), "{mode}");
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let out = tempfile::tempdir().unwrap();
    let o = run_training(&tiny("dcc_md", 0.2, 100), out.path()).unwrap();
    let dir = o.checkpoint_dir;
    let manifest = std::fs::read_to_string(dir.join(checkpoint::MANIFEST)).unwrap();
    std::fs::write(dir.join(checkpoint::MANIFEST), manifest.replace("n_agents = 4", "n_agents = 3")).unwrap();
    assert!(checkpoint::load(&dir).is_err());
    std::fs::write(dir.join(checkpoint::MANIFEST), &manifest).unwrap();
    std::fs::write(dir.join("agent0_g.dnmd"), b"DNMD").unwrap();
    assert!(checkpoint::load(&dir).is_err());
    assert!(checkpoint::load(&out.path().join("missing")).is_err());
}

#[test]
fn all_links_down_equals_zero_messages() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny("dcc_md", 0.4, 300);
    let o = run_training(&cfg, out.path()).unwrap();
    let (_, policy) = checkpoint::load(&o.checkpoint_dir).unwrap();
    let Policy::Dqn { agents, .. } = &policy else { panic!() };
    let obs = dnmd_core::envs::PursuitConfig::small().obs_dim();
    let all = EvalOptions { link: LinkFailure::All, ..EvalOptions::greedy(3, 4) };
    let broken = evaluate(&policy, &cfg.env, &all).unwrap();
    let mute = Policy::Dqn {
        agents: agents.clone(),
        codec: MessageCodec::Encoder(zero_encoder(obs)),
    };
    let muted = evaluate(&mute, &cfg.env, &EvalOptions::greedy(3, 4)).unwrap();
    assert_eq!(broken, muted);
}

/// An "encoder" that sends all-zero messages of the observation length.
fn zero_encoder(dim: usize) -> dnmd_core::nn::Mlp {
    use dnmd_core::nn::{Activation, Dense, LayerSpec, Mlp};
    Mlp::from_layers(vec![Dense::zeros(LayerSpec::new(dim, dim, Activation::Linear))]).unwrap()
}

#[test]
fn sweep_rows_and_aggregation() {
    let out = tempfile::tempdir().unwrap();
    let cfg = tiny("dcc_md", 0.0, 200);
    let ps = [0.0, 0.5];
    let res = sweep(&cfg, &ps, &[0, 1], out.path()).unwrap();
    assert_eq!(res.raw.len(), 4);
    assert_eq!(res.table.len(), 2);
    let raw = read_metrics(&out.path().join("sweep_raw.csv")).unwrap();
    assert_eq!(raw, res.raw);
    // recompute the table from the raw file by hand
    for row in &res.table {
        let c: Vec<f64> = raw.iter().filter(|r| r.p == row.p).map(|r| r.catches).collect();
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        assert!((row.mean_catches - mean).abs() < 1e-12);
        assert_eq!(row.runs, 2);
    }
    assert_eq!(aggregate(&ps, &raw), res.table);
    // the p = 0 rows are plain DCC runs
    let dcc = run_training(&tiny("dcc", 0.0, 200), out.path()).unwrap();
    let last = dcc.rows.last().unwrap();
    let p0 = &res.raw[0];
    assert_eq!((p0.catches, p0.mean_return, p0.loss), (last.catches, last.mean_return, last.loss));
    assert!(sweep(&cfg, &[], &[0], out.path()).is_err());
    assert!(sweep(&cfg, &[1.5], &[0], out.path()).is_err());
}

#[test]
fn navigation_and_waterworld_train() {
    let out = tempfile::tempdir().unwrap();
    let nav = RunConfig::parse(
        "preset = nav-small\ntrain.steps = 300\ntrain.eval_every = 150\ntrain.eval_episodes = 2\ntrain.batch_size = 8\n",
    )
    .unwrap();
    let o = run_training(&nav, out.path()).unwrap();
    assert_eq!(o.rows.len(), 2);
    assert!(o.rows.iter().all(|r| r.mean_return < 0.0));
    checkpoint::load(&o.checkpoint_dir).unwrap();

    for mode in ["maddpg_md", "maddpg", "ddpg"] {
        let water = RunConfig::parse(&format!(
            "preset = water-small\nagent.mode = {mode}\nenv.horizon = 50\ntrain.steps = 400\ntrain.eval_every = 200\n\
             train.eval_episodes = 1\ntrain.batch_size = 8\n"
        ))
        .unwrap();
        let o = run_training(&water, out.path()).unwrap();
        assert_eq!(o.rows.len(), 2);
        assert!(o.rows[1].loss > 0.0, "{mode}");
        let (_, policy) = checkpoint::load(&o.checkpoint_dir).unwrap();
        assert!(matches!(policy, Policy::Ddpg { .. }));
    }
}

#[test]
fn compressed_messages_use_the_encoder() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny("dcc_md", 0.2, 200);
    cfg.agent.compressed = true;
    cfg.agent.ae_samples = 500;
    cfg.agent.ae_epochs = 1;
    let o = run_training(&cfg, out.path()).unwrap();
    let (_, policy) = checkpoint::load(&o.checkpoint_dir).unwrap();
    let Policy::Dqn { agents, codec } = policy else { panic!() };
    assert_eq!(codec.message_dim(147), 32);
    assert_eq!(agents[0].net.layout().total_dim(), 147 + 3 * 32);
}

#[test]
fn learns_to_catch_on_a_small_map() {
    let cfg = RunConfig::parse(
        "preset = pursuit-small\nenv.n_agents = 2\nenv.n_evaders = 1\nenv.width = 5\nenv.height = 5\n\
         agent.mode = dcc_md\nagent.p = 0.2\ntrain.steps = 200000\ntrain.eval_every = 50000\n",
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = run_training(&cfg, out.path()).unwrap();
    let (_, policy) = checkpoint::load(&o.checkpoint_dir).unwrap();
    let opts = EvalOptions::greedy(20, 99);
    let trained = evaluate(&policy, &cfg.env, &opts).unwrap();
    let random = evaluate(&Policy::Random, &cfg.env, &opts).unwrap();
    assert!(
        trained.mean_catches > random.mean_catches,
        "trained {} vs random {}",
        trained.mean_catches,
        random.mean_catches
    );
}
