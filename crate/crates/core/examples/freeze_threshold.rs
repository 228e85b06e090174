//! Re-derives the bundled non-collapse threshold and prints it as JSON.

use geodyn::decoding::{derive_threshold, DecodeConfig, IfsCoupledConfig, NonCollapseThreshold, SourceConfig};

fn main() {
    let frozen = NonCollapseThreshold::frozen();
    let source = SourceConfig::IfsCoupled(IfsCoupledConfig::default()).with_beta(frozen.beta.unwrap_or(2.0));
    let rule = derive_threshold(&source, &DecodeConfig::default(), frozen.runs, frozen.quantile, frozen.root_seed)
        .expect("derivation runs");
    println!("{}", serde_json::to_string_pretty(&rule).unwrap());
}
