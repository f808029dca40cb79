use std::path::Path;

use super::prompts::{build_standard_prompt, PromptDims};
use super::{ConditionNet, PromptState};
use crate::encoder::{parse_usize, write_rows, RowReader};
use crate::error::{Error, Result};
use crate::rng::stream;

const MAGIC: &str = "GCOT-PROMPT";
const VERSION: &str = "v1";
const WHAT: &str = "prompt checkpoint";

/// Header `K L h s d kind N chain`, then rows of w, W1, b1, W2, b2 and the
/// standard prompt's tensors.
pub fn save_prompt_state(state: &PromptState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!(
        "{MAGIC} {VERSION}\n{} {} {} {} {} {} {} {}\n",
        state.steps,
        state.num_layers(),
        state.hidden_dim(),
        state.condnet.w1.cols(),
        state.feature_dim(),
        state.standard.kind(),
        state.standard.num_prompts(),
        u8::from(state.chain_features),
    );
    write_rows(&mut out, &state.fusion);
    for p in state.condnet.params() {
        write_rows(&mut out, p);
    }
    for p in state.standard.params() {
        write_rows(&mut out, p);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_prompt_state(path: impl AsRef<Path>) -> Result<PromptState> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompt_state(&text)
}

pub(crate) fn parse_prompt_state(text: &str) -> Result<PromptState> {
    let mut reader = RowReader::open(text, MAGIC, VERSION, WHAT)?;
    let header = reader.header_line()?;
    if header.len() != 7 && header.len() != 8 {
        return Err(Error::Corrupt(format!(
            "{WHAT}: malformed dimension header"
        )));
    }
    let steps = parse_usize(header.first(), WHAT)?;
    let layers = parse_usize(header.get(1), WHAT)?;
    let hidden = parse_usize(header.get(2), WHAT)?;
    let bottleneck = parse_usize(header.get(3), WHAT)?;
    let feature_dim = parse_usize(header.get(4), WHAT)?;
    let kind = header[5];
    let num_prompts = parse_usize(header.get(6), WHAT)?;
    let chain_features = match header.get(7) {
        None | Some(&"0") => false,
        Some(&"1") => true,
        Some(other) => return Err(Error::Corrupt(format!("{WHAT}: bad chain flag '{other}'"))),
    };
    if [steps, layers, hidden, bottleneck, feature_dim, num_prompts].contains(&0) {
        return Err(Error::Corrupt(format!("{WHAT}: zero dimension in header")));
    }

    let fusion = reader.tensor(1, layers)?;
    let condnet = ConditionNet {
        w1: reader.tensor(hidden, bottleneck)?,
        b1: reader.tensor(1, bottleneck)?,
        w2: reader.tensor(bottleneck, feature_dim)?,
        b2: reader.tensor(1, feature_dim)?,
    };
    let dims = PromptDims {
        hidden,
        feature_dim,
        num_prompts,
    };
    let mut standard =
        build_standard_prompt(kind, &dims, &mut stream(0, &[])).map_err(|e| match e {
            Error::Config(m) => Error::Corrupt(format!("{WHAT}: {m}")),
            other => other,
        })?;
    for p in standard.params_mut() {
        *p = reader.tensor(p.rows(), p.cols())?;
    }
    reader.finish()?;
    Ok(PromptState {
        steps,
        chain_features,
        fusion,
        fusion_pinned: false,
        condnet,
        standard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cot::{CotConfig, StdPromptConfig};
    use crate::encoder::EncoderConfig;
    use crate::graphdata::TaskKind;

    #[test]
    fn round_trip_every_kind() {
        for kind in ["gpf_plus", "gpf", "graphprompt"] {
            let config = CotConfig {
                std_prompt: StdPromptConfig {
                    kind: kind.into(),
                    num_prompts: 3,
                },
                ..CotConfig::for_task(TaskKind::Node)
            };
            let mut state = PromptState::init(
                &config,
                EncoderConfig::new(3, 4, 5).unwrap(),
                &mut stream(1, &[]),
            )
            .unwrap();
            state.condnet.w2.values_mut()[0] = 0.1 + 0.2;
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.txt");
            save_prompt_state(&state, &path).unwrap();
            let back = load_prompt_state(&path).unwrap();
            assert_eq!(back.fusion, state.fusion);
            assert_eq!(back.condnet, state.condnet);
            assert_eq!(back.steps, state.steps);
            assert_eq!(back.standard.kind(), kind);
            let a: Vec<_> = back.standard.params().into_iter().cloned().collect();
            let b: Vec<_> = state.standard.params().into_iter().cloned().collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            parse_prompt_state("GCOT-CKPT v1\n"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_prompt_state("GCOT-PROMPT v9\n"),
            Err(Error::Version(_))
        ));
        assert!(matches!(
            parse_prompt_state("GCOT-PROMPT v1\n2 1 1 1 1 gpf_plus 1 0\n1\n"),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(
            parse_prompt_state("GCOT-PROMPT v1\n2 1 1 1 1 mystery 1\n"),
            Err(Error::Corrupt(_))
        ));
    }
}
