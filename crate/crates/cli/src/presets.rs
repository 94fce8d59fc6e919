//! Named configurations for the best-performing agent settings.

use anyhow::{bail, Result};

pub const NAMES: [&str; 2] = ["dqn_lfu_best", "dqn_lru_best"];

const DQN_LFU_BEST: &str = r#"
policy = "DQN_LFU"
capacity = 16
rti_s = 0.01
idle_timeout_s = 30.0
eti_multiple = 5
learning_rate = 0.001
gamma = 0.99
hidden_layers = "128_128_128"
"#;

const DQN_LRU_BEST: &str = r#"
policy = "DQN_LRU"
capacity = 32
rti_s = 0.01
idle_timeout_s = 30.0
eti_multiple = 100
learning_rate = 0.1
gamma = 0.99
hidden_layers = "512_512"
"#;

pub fn preset(name: &str) -> Result<toml::Table> {
    let text = match name {
        "dqn_lfu_best" => DQN_LFU_BEST,
        "dqn_lru_best" => DQN_LRU_BEST,
        _ => bail!("unknown preset {name:?} (known: {})", NAMES.join(", ")),
    };
    Ok(toml::from_str(text).expect("built-in presets parse"))
}
