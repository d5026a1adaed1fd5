//! WebAssembly bindings for the static demo page in `www/`.

use llm_codec::codebook::{build_subword_codebook, build_word_codebook, synthetic_words, Codebook, EmbeddingTable};
use llm_codec::icl::{build_prompt, Episode};
use llm_codec::quantizer::{encode_trace, render_tokens, CodecConfig, LayerSelection, QuantizedAudio};
use llm_codec::signal::FeatureGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEMO_VOCAB: usize = 256;
const DEMO_DIM: usize = 8;
const DEMO_WORDS: usize = 64;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Tokens per second for `strides` such as `"4,2,1"`.
#[wasm_bindgen(js_name = tokensPerSecond)]
pub fn tokens_per_second(sample_rate: usize, total_downsample: usize, strides: &str) -> Result<usize, JsError> {
    let strides = parse_strides(strides)?;
    if total_downsample == 0 {
        return Err(JsError::new("total down-sampling must be positive"));
    }
    Ok(llm_codec::quantizer::tokens_per_second(sample_rate, total_downsample, &strides))
}

fn parse_strides(text: &str) -> Result<Vec<usize>, JsError> {
    let strides: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| JsError::new(&format!("bad stride '{}'", s.trim()))))
        .collect::<Result<_, _>>()?;
    if strides.contains(&0) {
        return Err(JsError::new("strides must be >= 1"));
    }
    Ok(strides)
}

fn demo_books(layers: usize, seed: u64) -> Result<Vec<Codebook>, JsError> {
    let table = EmbeddingTable::synthetic(DEMO_VOCAB, DEMO_DIM, seed);
    let (words, tok) = synthetic_words(&table, DEMO_WORDS, seed);
    let (word, _) = build_word_codebook(&words, &tok, &table).map_err(js_err)?;
    let sub = build_subword_codebook(&table).map_err(js_err)?;
    let mut books = vec![word];
    books.extend(std::iter::repeat_n(sub, layers.saturating_sub(1)));
    Ok(books)
}

/// A slowly changing word plus per-frame sub-word detail and a little noise,
/// so each layer has something left to explain.
fn demo_latent(frames: usize, books: &[Codebook], seed: u64) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (word, sub) = (&books[0], books.last().unwrap_or(&books[0]));
    let mut data = Vec::with_capacity(frames * DEMO_DIM);
    let mut w = 0;
    for t in 0..frames {
        if t % 4 == 0 {
            w = rng.gen_range(0..word.len());
        }
        let s = rng.gen_range(0..sub.len());
        for k in 0..DEMO_DIM {
            let noise: f64 = rng.gen_range(-0.05..0.05);
            data.push(word.projected_entry(w)[k] + 0.3 * sub.projected_entry(s)[k] + noise);
        }
    }
    FeatureGrid::new(data, frames, DEMO_DIM).expect("demo latent shape")
}

/// Quantizes a synthetic latent of `frames` frames with a synthetic vocabulary
/// and reports, per layer, its words and the residual energy left behind.
#[wasm_bindgen(js_name = rvqDemo)]
pub fn rvq_demo(frames: usize, strides: &str, seed: u64) -> Result<String, JsError> {
    let vq_strides = parse_strides(strides)?;
    if frames == 0 || frames > 4096 {
        return Err(JsError::new("frames must be in 1..=4096"));
    }
    let cfg = CodecConfig { sample_rate: 16_000, encoder_strides: vec![480], latent_dim: DEMO_DIM, vq_strides };
    let books = demo_books(cfg.layers(), seed)?;
    let latent = demo_latent(frames, &books, seed);
    let trace = encode_trace(&latent, &cfg, &books).map_err(js_err)?;

    let energy = |g: &FeatureGrid| g.data().iter().map(|v| v * v).sum::<f64>();
    let total = energy(&latent);
    let stream = QuantizedAudio {
        layers: trace.indices.clone(),
        strides: cfg.vq_strides.clone(),
        frame_count: frames,
        config_digest: 0,
    };
    let mut layers = Vec::new();
    for i in 0..cfg.layers() {
        let after = trace.residual_inputs.get(i + 1).unwrap_or(&trace.final_residual);
        let words = render_tokens(&stream, &books, &LayerSelection::new(vec![i]).map_err(js_err)?).map_err(js_err)?;
        layers.push(json!({
            "stride": cfg.vq_strides[i],
            "tokens": trace.indices[i].len(),
            "words": words,
            "residual_energy": energy(after) / total,
        }));
    }
    Ok(json!({ "frames": frames, "total_tokens": stream.total_tokens(), "layers": layers }).to_string())
}

/// Renders the few-shot prompt of an episode given as JSON.
#[wasm_bindgen(js_name = buildPrompt)]
pub fn build_prompt_json(episode: &str) -> Result<String, JsError> {
    let ep: Episode = serde_json::from_str(episode).map_err(js_err)?;
    build_prompt(&ep).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_rates() {
        assert_eq!(tokens_per_second(16_000, 480, "4,2,1").unwrap(), 57);
        assert_eq!(tokens_per_second(16_000, 320, "4, 2, 1").unwrap(), 87);
    }

    #[test]
    fn rvq_demo_reports_every_layer() {
        let out: serde_json::Value = serde_json::from_str(&rvq_demo(33, "4,2,1", 1).unwrap()).unwrap();
        assert_eq!(out["total_tokens"], 57);
        let layers = out["layers"].as_array().unwrap();
        assert_eq!(layers.len(), 3);
        let first = layers[0]["tokens"].as_u64().unwrap() as usize;
        assert_eq!(layers[0]["words"].as_str().unwrap().split(' ').count(), first);
        let e: Vec<f64> = layers.iter().map(|l| l["residual_energy"].as_f64().unwrap()).collect();
        assert!(e.windows(2).all(|p| p[1] <= p[0]) && e[0] < 1.0, "{e:?}");
    }

    #[test]
    fn prompt_from_json() {
        let ep = r#"{"task_kind":"classification","label_set":["Happy","Sad"],
            "demonstrations":[{"input":"a b","output":"Happy"},{"input":"c d","output":"Sad"}],"query":"a c"}"#;
        let prompt = build_prompt_json(ep).unwrap();
        assert!(prompt.contains("###\nInput: a b\nOutput: Happy\n"));
        assert!(prompt.ends_with("Input: a c\nOutput:"));
    }
}
