use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use llm_codec::codebook::{save_embedding_table, Codebook, EmbeddingTable, TokenizerMap};
use llm_codec::icl::{save_episodes, separable_episodes};
use llm_codec::nn::{decode_checkpoint, encode_checkpoint, Tensor};
use llm_codec::quantizer::QuantizedAudio;
use llm_codec::signal::{load_wav, save_wav, snr_db, AudioBuffer};
use llm_codec::synth::multi_sine_clip;
use llmcodec_cli::commands::HistoryFile;
use tempfile::TempDir;

fn llmcodec(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llmcodec"))
        .args(args)
        .current_dir(dir)
        .env_remove("LLMCODEC_LM_URL")
        .env_remove("LLMCODEC_LM_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    stdout(o)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Ten words, three of which split into three or more sub-words.
fn toy_assets(dir: &Path) {
    let table = EmbeddingTable::synthetic(20, 4, 3);
    save_embedding_table(&table, dir.join("emb.lceb")).unwrap();
    let mut tok = TokenizerMap::default();
    let mut words = String::new();
    for i in 0..10 {
        let pieces = if i < 3 { 3 + i } else { 1 + i % 2 };
        tok.insert(format!("w{i}"), (0..pieces).map(|j| (i + j) % 20).collect());
        words.push_str(&format!("w{i}\n"));
    }
    write(dir, "words.txt", &words);
    write(dir, "tok.json", &tok.to_json());
}

#[test]
fn build_codebook_reports_and_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    toy_assets(d);
    let args =
        ["build-codebook", "--words", "words.txt", "--tokmap", "tok.json", "--emb", "emb.lceb", "--out", "a.lceb"];
    let text = ok(&llmcodec(&args, d));
    assert!(text.contains("N=7 excluded=3"), "{text}");
    let mut again = args;
    again[8] = "b.lceb";
    let json = ok(&llmcodec(&[&["--json"], &again[..]].concat(), d));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!((v["n"].as_u64(), v["excluded"].as_u64()), (Some(7), Some(3)));
    assert_eq!(std::fs::read(d.join("a.lceb")).unwrap(), std::fs::read(d.join("b.lceb")).unwrap());

    let missing = llmcodec(
        &["build-codebook", "--words", "nope.txt", "--tokmap", "tok.json", "--emb", "emb.lceb", "--out", "c"],
        d,
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());
}

fn train(dir: &Path, cfg: &str, extra: &[&str]) -> Output {
    write(dir, "run.cfg", cfg);
    llmcodec(&[&["train", "--config", "run.cfg"], extra].concat(), dir)
}

fn history(dir: &Path, name: &str) -> HistoryFile {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn synthetic_training_run() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&train(d, "checkpoint_path = m.lckp\nhistory_path = h.json\n", &["--synthetic", "--steps", "50"]));
    let h = history(d, "h.json");
    assert_eq!(h.history.len(), 50);
    assert!(h.history[49].time < h.history[0].time, "{} vs {}", h.history[49].time, h.history[0].time);
    assert_eq!(h.seed, 1);
    assert!(d.join("m.lckp").exists());
}

#[test]
fn train_needs_a_data_source() {
    let dir = TempDir::new().unwrap();
    assert_eq!(train(dir.path(), "", &[]).status.code(), Some(2));
    assert_eq!(train(dir.path(), "", &["--data-dir", "missing"]).status.code(), Some(2));
    assert_eq!(train(dir.path(), "bogus = 1\n", &["--synthetic"]).status.code(), Some(2));
}

#[test]
fn non_finite_checkpoint_exits_4() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&train(d, "checkpoint_path = m.lckp\nhistory_path = h.json\n", &["--synthetic", "--steps", "1"]));
    let mut ckpt = decode_checkpoint(&std::fs::read(d.join("m.lckp")).unwrap()).unwrap();
    let v = ckpt.params.value("dec.conv_out.weight").unwrap().clone();
    let bad = Tensor::new(vec![f64::NAN; v.len()], v.shape().to_vec()).unwrap();
    ckpt.params.set_value("dec.conv_out.weight", bad).unwrap();
    std::fs::write(d.join("bad.lckp"), encode_checkpoint(&ckpt).unwrap()).unwrap();
    let out = train(
        d,
        "checkpoint_path = m2.lckp\nhistory_path = h2.json\n",
        &["--synthetic", "--steps", "2", "--resume", "bad.lckp"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 2"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn data_dir_training_reads_wavs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("wavs")).unwrap();
    for i in 0..2 {
        save_wav(&multi_sine_clip(4800, 16000, i), d.join(format!("wavs/c{i}.wav"))).unwrap();
    }
    ok(&train(d, "batch_size = 2\n", &["--data-dir", "wavs", "--steps", "2"]));
    assert_eq!(history(d, "history.json").history.len(), 2);
}

#[test]
fn encode_decode_and_tokens() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&train(d, "checkpoint_path = m.lckp\nhistory_path = h.json\n", &["--synthetic", "--steps", "3"]));
    let reference = history(d, "h.json").reference_snr_db.unwrap();
    let clip = multi_sine_clip(16000, 16000, 1);
    let cut = AudioBuffer::new(clip.samples()[..15840].to_vec(), 16000).unwrap();
    save_wav(&cut, d.join("in.wav")).unwrap();
    let cfg = ["--config", "run.cfg", "--ckpt", "m.lckp"];
    ok(&llmcodec(&[&["encode", "--in", "in.wav", "--out", "t.json"], &cfg[..]].concat(), d));
    let stream = QuantizedAudio::load(d.join("t.json")).unwrap();
    assert_eq!(stream.layers.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 16, 33]);
    ok(&llmcodec(&[&["decode", "--in", "t.json", "--out", "out.wav"], &cfg[..]].concat(), d));
    let out = load_wav(d.join("out.wav")).unwrap();
    let input = load_wav(d.join("in.wav")).unwrap();
    let snr = snr_db(&input, &out).unwrap();
    assert!(snr >= reference - 0.05, "{snr} vs {reference}");

    let semantic = ok(&llmcodec(&[&["tokens", "--in", "t.json", "--layers", "semantic"], &cfg[..]].concat(), d));
    assert_eq!(semantic.lines().count(), 1);
    assert_eq!(semantic.split_whitespace().count(), 8);
    let all = ok(&llmcodec(&[&["tokens", "--in", "in.wav"], &cfg[..]].concat(), d));
    let lines: Vec<&str> = all.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!((lines[0], lines[2], lines[4]), ("# layer 1", "# layer 2", "# layer 3"));
    assert_eq!(lines[1], semantic.trim_end());

    std::fs::write(d.join("broken.json"), "{\"layers\": 3}").unwrap();
    assert_ne!(llmcodec(&[&["tokens", "--in", "broken.json"], &cfg[..]].concat(), d).status.code(), Some(0));

    // another seed means other codebooks and projections
    write(d, "other.cfg", "seed = 2\n");
    let other = ["--config", "other.cfg", "--ckpt", "m.lckp"];
    let mismatch = llmcodec(&[&["decode", "--in", "t.json", "--out", "x.wav"], &other[..]].concat(), d);
    assert_eq!(mismatch.status.code(), Some(3));
}

#[test]
fn stream_from_another_checkpoint_exits_3() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&train(d, "checkpoint_path = a.lckp\nhistory_path = ha.json\n", &["--synthetic", "--steps", "1"]));
    ok(&train(d, "checkpoint_path = b.lckp\nhistory_path = hb.json\n", &["--synthetic", "--steps", "2"]));
    save_wav(&multi_sine_clip(960, 16000, 5), d.join("in.wav")).unwrap();
    ok(&llmcodec(&["encode", "--in", "in.wav", "--out", "t.json", "--config", "run.cfg", "--ckpt", "a.lckp"], d));
    let out = llmcodec(&["decode", "--in", "t.json", "--out", "o.wav", "--config", "run.cfg", "--ckpt", "b.lckp"], d);
    assert_eq!(out.status.code(), Some(3));
    let out = llmcodec(&["tokens", "--in", "t.json", "--config", "run.cfg", "--ckpt", "b.lckp"], d);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn canonical_second_has_57_tokens() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let canonical = "latent_dim = 512\nchannels = 32\ndisc_hops = 32,64,128,256,512,1024\ndisc_channels = 64\n";
    ok(&train(d, canonical, &["--synthetic", "--steps", "0"]));
    save_wav(&multi_sine_clip(16000, 16000, 9), d.join("one.wav")).unwrap();
    let json = ok(&llmcodec(
        &["--json", "encode", "--in", "one.wav", "--out", "t.json", "--config", "run.cfg", "--ckpt", "model.lckp"],
        d,
    ));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["total_tokens"], 57);
    assert_eq!(v["tokens_per_layer"], serde_json::json!([8, 16, 33]));
}

fn separable_file(dir: &Path) {
    let labels: Vec<String> = (0..16).map(|i| format!("tok{i}")).collect();
    let book = Codebook::new(labels, (0..32).map(f64::from).collect(), 2).unwrap();
    save_episodes(&separable_episodes(&book, 50, 11), dir.join("eps.json")).unwrap();
}

#[test]
fn icl_with_mocks() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    separable_file(d);
    let text = ok(&llmcodec(&["icl", "--episodes", "eps.json", "--client", "mock", "--report", "r.json"], d));
    assert!(text.contains("accuracy 1.0000 (50/50)"), "{text}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    let results = report["classification"]["results"].as_array().unwrap();
    assert_eq!(results.len(), 50);
    assert_eq!(results[7]["index"], 7);
    assert_eq!(results[0]["prompt_hash"].as_str().unwrap().len(), 16);

    ok(&llmcodec(&["icl", "--episodes", "eps.json", "--mock-answer", "beta", "--report", "c.json"], d));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("c.json")).unwrap()).unwrap();
    assert_eq!(report["classification"]["accuracy"], 0.5);
}

#[test]
fn icl_http_without_env_exits_5() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    separable_file(d);
    let out = llmcodec(&["icl", "--episodes", "eps.json", "--client", "http", "--report", "r.json"], d);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("LLMCODEC_LM_URL"));
    assert_eq!(llmcodec(&["icl", "--episodes", "none.json", "--report", "r.json"], d).status.code(), Some(2));
}
