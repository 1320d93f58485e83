//! Checkpoint directories: `config.txt`, `manifest.txt` and one network file
//! per subnet.
//!
//! ```text
//! format = 1
//! env = pursuit
//! mode = dcc_md
//! p = 0.2
//! n_agents = 4
//! agent.0 = agent0_f.dnmd agent0_g.dnmd agent0_h.dnmd
//! encoder = encoder.dnmd
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::RunConfig;
use super::eval::Policy;
use crate::ddpg::DdpgLearner;
use crate::dqn::{save_qnet, AgentMode, DqnPolicy, QNet};
use crate::envs::MessageCodec;
use crate::error::{Error, Result};
use crate::masking::BlockLayout;
use crate::nn::Mlp;

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG: &str = "config.txt";
const FORMAT: &str = "1";

fn header(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format = {FORMAT}");
    let _ = writeln!(s, "env = {}", cfg.env.name());
    let _ = writeln!(s, "mode = {}", cfg.agent.mode);
    let _ = writeln!(s, "p = {}", cfg.agent.p);
    let _ = writeln!(s, "n_agents = {}", cfg.env.n_agents());
    s
}

/// Writes the Q-networks of every agent (and the message encoder, if any).
pub fn save_dqn(dir: &Path, cfg: &RunConfig, nets: &[&QNet], encoder: Option<&Mlp>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = header(cfg);
    for (i, net) in nets.iter().enumerate() {
        let files = save_qnet(net, dir, &format!("agent{i}"))?;
        let _ = writeln!(manifest, "agent.{i} = {}", files.join(" "));
    }
    if let Some(enc) = encoder {
        enc.save(dir.join("encoder.dnmd"))?;
        let _ = writeln!(manifest, "encoder = encoder.dnmd");
    }
    std::fs::write(dir.join(CONFIG), cfg.to_text())?;
    std::fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// Writes actors (used for evaluation) and critics (kept for inspection).
pub fn save_ddpg(dir: &Path, cfg: &RunConfig, learner: &DdpgLearner) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = header(cfg);
    for (s, actor) in learner.actors().iter().enumerate() {
        actor.save(dir.join(format!("actor{s}.dnmd")))?;
        for (k, net) in learner.critics()[s].subnets().into_iter().enumerate() {
            net.save(dir.join(format!("critic{s}_{k}.dnmd")))?;
        }
    }
    for i in 0..learner.n_agents() {
        let s = if learner.parameter_sets() == 1 { 0 } else { i };
        let _ = writeln!(manifest, "actor.{i} = actor{s}.dnmd");
    }
    std::fs::write(dir.join(CONFIG), cfg.to_text())?;
    std::fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad manifest line `{line}`")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Loads the run config and the evaluation policy stored in `dir`.
pub fn load(dir: &Path) -> Result<(RunConfig, Policy)> {
    let cfg = RunConfig::from_file(&dir.join(CONFIG)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let m = read_manifest(dir)?;
    let get = |k: &str| m.get(k).ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{k}`")));
    if get("format")? != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported checkpoint format {}", get("format")?)));
    }
    let n = cfg.env.n_agents();
    if get("env")? != cfg.env.name() || get("mode")? != &cfg.agent.mode || get("n_agents")? != &n.to_string() {
        return Err(Error::Checkpoint("manifest does not match the stored config".into()));
    }
    if !cfg.env.is_discrete() {
        let actors = (0..n)
            .map(|i| Mlp::load(dir.join(get(&format!("actor.{i}"))?)))
            .collect::<Result<Vec<_>>>()?;
        if actors.iter().any(|a| a.input_dim() != cfg.env.obs_dim() || a.output_dim() != 2) {
            return Err(Error::Checkpoint("actor shape does not match the environment".into()));
        }
        return Ok((cfg, Policy::Ddpg { actors }));
    }
    let mode = cfg.dqn_mode()?;
    let codec = match m.get("encoder") {
        Some(f) => MessageCodec::Encoder(Mlp::load(dir.join(f))?),
        None => MessageCodec::Identity,
    };
    let obs_dim = cfg.env.obs_dim();
    let msg_dim = codec.message_dim(obs_dim);
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let nets = get(&format!("agent.{i}"))?
            .split_whitespace()
            .map(|f| Mlp::load(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let layout = BlockLayout::for_agent(i, n, obs_dim, msg_dim)?;
        let net = QNet::from_subnets(nets, layout, mode == AgentMode::Fdc)
            .map_err(|e| Error::Checkpoint(format!("agent {i}: {e}")))?;
        agents.push(DqnPolicy { mode, net });
    }
    Ok((cfg, Policy::Dqn { agents, codec }))
}
