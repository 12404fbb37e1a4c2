use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn topocf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topocf"))
        .args(args)
        .env_remove("TOPOCF_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = topocf(args);
    assert!(
        out.status.success(),
        "topocf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, normal: usize, abnormal: usize, seed: u64) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--normal",
        &normal.to_string(),
        "--abnormal",
        &abnormal.to_string(),
        "--seed",
        &seed.to_string(),
        "-o",
        s(&data),
    ]);
    data
}

fn pgm_count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .map(|d| {
            d.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
                .count()
        })
        .unwrap_or(0)
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".manifest.json") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_writes_images_masks_codes_and_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let a = synth(&t.path().join("a"), 5, 5, 42);
    let b = synth(&t.path().join("b"), 5, 5, 42);
    assert_eq!(pgm_count(&a.join("images")), 10);
    assert_eq!(pgm_count(&a.join("masks")), 10);
    let codes = fs::read_to_string(a.join("codes.csv")).unwrap();
    assert_eq!(codes.lines().count(), 11);
    assert!(codes.starts_with("id,label,cs_0,cs_1,cs_2,cs_3,cs_4,cs_5,cs_6,cs_7,is_0,"));
    assert_eq!(files(&a), files(&b));
    let m = json(&a.join("synth.manifest.json"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["command"], "synth");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 22);

    let c = synth(&t.path().join("c"), 5, 5, 43);
    assert_ne!(files(&a), files(&c));
}

#[test]
fn empty_synth_writes_header_only() {
    let t = tempfile::tempdir().unwrap();
    let d = synth(t.path(), 0, 0, 1);
    assert_eq!(
        fs::read_to_string(d.join("codes.csv")).unwrap(),
        "id,label,cs_0,cs_1,cs_2,cs_3,cs_4,cs_5,cs_6,cs_7\n"
    );
    assert_eq!(pgm_count(&d.join("images")), 0);
}

#[test]
fn out_dir_defaults_to_environment() {
    let t = tempfile::tempdir().unwrap();
    let target = t.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_topocf"))
        .args(["synth", "--normal", "1", "--abnormal", "1"])
        .env("TOPOCF_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("codes.csv").exists());
}

#[test]
fn config_seed_is_used_and_flag_overrides_it() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.toml");
    fs::write(&cfg, "seed = 7\n").unwrap();
    let from_cfg = t.path().join("cfg");
    ok(&[
        "--config",
        s(&cfg),
        "synth",
        "--normal",
        "2",
        "--abnormal",
        "2",
        "-o",
        s(&from_cfg),
    ]);
    let direct = synth(&t.path().join("direct"), 2, 2, 7);
    assert_eq!(
        fs::read(from_cfg.join("codes.csv")).unwrap(),
        fs::read(direct.join("codes.csv")).unwrap()
    );
    let overridden = t.path().join("over");
    ok(&[
        "--config",
        s(&cfg),
        "--seed",
        "8",
        "synth",
        "--normal",
        "2",
        "--abnormal",
        "2",
        "-o",
        s(&overridden),
    ]);
    assert_ne!(
        fs::read(from_cfg.join("codes.csv")).unwrap(),
        fs::read(overridden.join("codes.csv")).unwrap()
    );
    assert_eq!(json(&overridden.join("synth.manifest.json"))["config"]["seed"], 8);
}

#[test]
fn pipeline_embed_topology_plan_segment_eval_plot() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 20, 20, 3);
    let run = t.path().join("run");
    let codes = data.join("codes.csv");
    let cfg = t.path().join("small.toml");
    fs::write(&cfg, "[cover]\nnx = 5\nny = 5\n").unwrap();
    ok(&["embed", "--codes", s(&codes), "-o", s(&run)]);
    assert_eq!(
        fs::read_to_string(run.join("embedding.csv")).unwrap().lines().count(),
        41
    );
    let emb = run.join("embedding.csv");
    ok(&[
        "--config",
        s(&cfg),
        "topology",
        "--codes",
        s(&codes),
        "--embedding",
        s(&emb),
        "-o",
        s(&run),
    ]);
    let graph = run.join("graph.json");
    let g = json(&graph);
    assert!(!g["nodes"].as_array().unwrap().is_empty());
    for key in ["id", "members", "center", "abnormal_ratio", "centroid2d"] {
        assert!(g["nodes"][0].get(key).is_some(), "node lacks {key}");
    }
    assert_eq!(g["nodes"][0]["center"].as_array().unwrap().len(), 8);

    ok(&["plan", "--codes", s(&codes), "--graph", s(&graph), "-o", s(&run)]);
    let plans = json(&run.join("plans.json"));
    assert_eq!(plans.as_array().unwrap().len(), 20);
    assert!(plans.as_array().unwrap().iter().all(|p| p["status"] == "ok"));

    for mode in ["graph", "linear", "direct"] {
        let seg = run.join(mode);
        let out = topocf(&[
            "segment",
            "--codes",
            s(&codes),
            "--graph",
            s(&graph),
            "--mode",
            mode,
            "-o",
            s(&seg),
        ]);
        assert!(matches!(out.status.code(), Some(0) | Some(4)));
        let segments = json(&seg.join("segments.json"));
        let records = segments["records"].as_array().unwrap();
        assert_eq!(records.len(), 20);
        let n_ok = records.iter().filter(|r| r["status"] == "ok").count();
        assert_eq!(pgm_count(&seg.join("masks")), n_ok);
        let heat = fs::read(seg.join("heatmaps.ndv1")).unwrap();
        assert_eq!(&heat[..4], b"NDV1");
        assert_eq!(heat.len(), 16 + 24 + 20 * 64 * 64 * 4);

        ok(&[
            "eval",
            "--pred",
            s(&seg.join("masks")),
            "--truth",
            s(&data.join("masks")),
            "--codes",
            s(&codes),
            "-o",
            s(&seg),
        ]);
        let report = json(&seg.join("report.json"));
        assert_eq!(report["n"], 20);
        assert_eq!(report["missing_predictions"].as_array().unwrap().len(), 20 - n_ok);
        assert_eq!(fs::read_to_string(seg.join("report.csv")).unwrap().lines().count(), 21);
    }

    ok(&[
        "plot",
        "--graph",
        s(&graph),
        "--embedding",
        s(&emb),
        "--codes",
        s(&codes),
        "-o",
        s(&run),
    ]);
    let svg = fs::read_to_string(run.join("graph.svg")).unwrap();
    assert_eq!(
        svg.matches("class=\"node\"").count(),
        g["nodes"].as_array().unwrap().len()
    );
    let scatter = fs::read_to_string(run.join("embedding.svg")).unwrap();
    assert_eq!(scatter.matches("<title>s").count(), 40);
}

#[test]
fn eval_against_itself_is_perfect() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 3, 3, 5);
    ok(&[
        "eval",
        "--pred",
        s(&data.join("masks")),
        "--truth",
        s(&data.join("masks")),
        "-o",
        s(t.path()),
    ]);
    let r = json(&t.path().join("report.json"));
    assert_eq!(
        (r["mean_iou"].as_f64(), r["mean_dice"].as_f64()),
        (Some(1.0), Some(1.0))
    );
    assert_eq!(r["n"], 6);
}

#[test]
fn one_node_graph_plot_shows_ratio() {
    let t = tempfile::tempdir().unwrap();
    let graph = t.path().join("g.json");
    fs::write(
        &graph,
        r#"{"nodes":[{"id":0,"members":["a","b","c","d"],"center":[0,0,0,0,0,0,0,0],"abnormal_ratio":0.75,"centroid2d":[1,1]}],"edges":[]}"#,
    )
    .unwrap();
    ok(&["plot", "--graph", s(&graph), "-o", s(t.path())]);
    let svg = fs::read_to_string(t.path().join("graph.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert!(svg.contains(">0.75</text>"));
    let first = svg.clone();
    ok(&["plot", "--graph", s(&graph), "-o", s(t.path())]);
    assert_eq!(fs::read_to_string(t.path().join("graph.svg")).unwrap(), first);
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("missing.csv");
    assert_eq!(
        topocf(&["embed", "--codes", s(&missing), "-o", s(t.path())])
            .status
            .code(),
        Some(2)
    );

    let bad = t.path().join("bad.csv");
    fs::write(
        &bad,
        "id,label,cs_0,cs_1,cs_2,cs_3,cs_4,cs_5,cs_6,cs_7\na,normal,0,0,0,0,oops,0,0,0\n",
    )
    .unwrap();
    let out = topocf(&["embed", "--codes", s(&bad), "-o", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:2:7"));

    let cfg = t.path().join("c.toml");
    fs::write(&cfg, "[cover]\nnx = 4\nbogus = 1\n").unwrap();
    let out = topocf(&[
        "--config",
        s(&cfg),
        "synth",
        "--normal",
        "1",
        "--abnormal",
        "1",
        "-o",
        s(t.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.toml:3:1"));

    // Too few records for the embedding is a contract violation.
    let data = synth(&t.path().join("small"), 1, 1, 1);
    assert_eq!(
        topocf(&["embed", "--codes", s(&data.join("codes.csv")), "-o", s(t.path())])
            .status
            .code(),
        Some(3)
    );

    // An embedding whose ids do not match the codes.
    let emb = t.path().join("e.csv");
    fs::write(&emb, "id,x,y\nzz,0,0\nyy,1,1\n").unwrap();
    let out = topocf(&[
        "topology",
        "--codes",
        s(&data.join("codes.csv")),
        "--embedding",
        s(&emb),
        "-o",
        s(t.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));

    // A graph without any normal node leaves nothing to plan towards.
    let graph = t.path().join("g.json");
    fs::write(
        &graph,
        r#"{"nodes":[{"id":0,"members":["s0001"],"center":[0.5,0.5,0.5,0.08,1,0,0,0],"abnormal_ratio":1.0,"centroid2d":[0,0]}],"edges":[]}"#,
    )
    .unwrap();
    let out = topocf(&[
        "plan",
        "--codes",
        s(&data.join("codes.csv")),
        "--graph",
        s(&graph),
        "--id",
        "s0001",
        "-o",
        s(t.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json(&t.path().join("plans.json"))[0]["status"], "failed");
    let out = topocf(&["plot", "--graph", s(&t.path().join("nope.json")), "-o", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
}

/// The subprocess codec driving `codec-serve` reproduces the in-process run.
#[test]
fn subprocess_codec_matches_in_process_codec() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 10, 10, 11);
    let codes = data.join("codes.csv");
    let run = t.path().join("run");
    ok(&["embed", "--codes", s(&codes), "-o", s(&run)]);
    ok(&[
        "topology",
        "--codes",
        s(&codes),
        "--embedding",
        s(&run.join("embedding.csv")),
        "-o",
        s(&run),
    ]);
    let graph = run.join("graph.json");
    let cfg = t.path().join("sub.toml");
    fs::write(
        &cfg,
        format!(
            "[codec]\nkind = \"subprocess\"\ncommand = \"'{}' codec-serve --op {{op}} --request-dir {{request_dir}}\"\n",
            env!("CARGO_BIN_EXE_topocf")
        ),
    )
    .unwrap();
    let local = run.join("local");
    let remote = run.join("remote");
    let code_local = topocf(&["segment", "--codes", s(&codes), "--graph", s(&graph), "-o", s(&local)])
        .status
        .code();
    let code_remote = topocf(&[
        "--config",
        s(&cfg),
        "segment",
        "--codes",
        s(&codes),
        "--graph",
        s(&graph),
        "-o",
        s(&remote),
    ])
    .status
    .code();
    assert_eq!(code_local, code_remote);
    // The bridge moves images as 8-bit PGM, so compare the masks, which
    // agree whenever quantization does not move a pixel across the threshold.
    let local_masks = files(&local.join("masks"));
    let remote_masks = files(&remote.join("masks"));
    assert_eq!(local_masks.len(), remote_masks.len());
    let same = local_masks.iter().zip(&remote_masks).filter(|(a, b)| a == b).count();
    assert!(
        same * 10 >= local_masks.len() * 8,
        "{same} of {} masks agree",
        local_masks.len()
    );
}

#[test]
fn codec_serve_encode_uses_registry() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 1, 1, 2);
    let req = t.path().join("req");
    fs::create_dir_all(req.join("in")).unwrap();
    fs::copy(data.join("images/s0001.pgm"), req.join("in/a.pgm")).unwrap();
    fs::write(req.join("request.csv"), "id,op,image\na,encode,in/a.pgm\n").unwrap();
    let out = topocf(&["codec-serve", "--op", "encode", "--request-dir", s(&req)]);
    assert_eq!(out.status.code(), Some(3), "no registry means the image is unknown");
    ok(&[
        "codec-serve",
        "--op",
        "encode",
        "--request-dir",
        s(&req),
        "--registry",
        s(&data.join("registry.json")),
    ]);
    let codes = fs::read_to_string(req.join("codes.csv")).unwrap();
    let row = fs::read_to_string(data.join("codes.csv"))
        .unwrap()
        .lines()
        .nth(2)
        .unwrap()
        .replacen("s0001,abnormal,", "a,", 1);
    assert_eq!(codes.lines().nth(1).unwrap(), row);
    assert!(req.join("codec-serve.manifest.json").exists());
}
