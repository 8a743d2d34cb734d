//! Parameter count of the full-size configuration and of the tiny one.

use mumidi::model::{param_count, ModelConfig};

fn main() {
    for (name, cfg) in [("default", ModelConfig::default()), ("tiny", ModelConfig::tiny())] {
        println!("{name}: {cfg:?}");
        println!("{}", param_count(&cfg));
    }
}
