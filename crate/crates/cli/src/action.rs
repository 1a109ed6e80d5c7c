//! `wider:<layer>` (1-based) and `deeper:<kind>@<position>` action strings.

use morphnas_core::arch::LayerKind;
use morphnas_core::morph::MorphAction;

pub fn parse_action(s: &str) -> Result<MorphAction, String> {
    let bad = |why: &str| format!("malformed action {s:?}: {why}; expected wider:<layer> or deeper:<kind>@<position>");
    let (verb, arg) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
    match verb.trim().to_ascii_lowercase().as_str() {
        "wider" => {
            let layer: usize = arg.trim().parse().map_err(|_| bad("layer must be a positive integer"))?;
            if layer == 0 {
                return Err(bad("layers are numbered from 1"));
            }
            Ok(MorphAction::wider(layer - 1))
        }
        "deeper" => {
            let (kind, pos) = arg.split_once('@').ok_or_else(|| bad("missing '@'"))?;
            let kind: LayerKind = kind.parse().map_err(|_| bad("kind must be fc, conv or rnn"))?;
            let position = pos.trim().parse().map_err(|_| bad("position must be a nonnegative integer"))?;
            Ok(MorphAction::Deeper { kind, position })
        }
        _ => Err(bad("unknown verb")),
    }
}
