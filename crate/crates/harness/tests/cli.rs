use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use usersod_harness::cli::{Cli, Command as Sub};

const SUBCOMMANDS: [&str; 7] = ["synth-gen", "dig", "review-serve", "pretrain-esm", "train", "eval", "ablate"];

fn usersod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usersod"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let out = usersod(&["--help"]);
    assert!(out.status.success());
    let help = text(&out.stdout);
    for sub in SUBCOMMANDS {
        assert!(help.contains(sub), "{sub} missing from\n{help}");
    }
}

#[test]
fn every_subcommand_takes_seed_and_config() {
    for sub in SUBCOMMANDS {
        let out = usersod(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        let help = text(&out.stdout);
        assert!(help.contains("--seed") && help.contains("--config"), "{sub}:\n{help}");
    }
}

#[test]
fn parsed_flags_reach_the_subcommand() {
    let cli = Cli::try_parse_from(["usersod", "synth-gen", "--seed", "9", "--scenes", "3", "--twin", "--out", "x"]).unwrap();
    match cli.command {
        Sub::SynthGen {
            common,
            scenes,
            twin,
            out,
        } => {
            assert_eq!(common.seed, Some(9));
            assert_eq!(scenes, Some(3));
            assert!(twin);
            assert_eq!(out, Path::new("x"));
        }
        other => panic!("parsed as {other:?}"),
    }
    assert!(Cli::try_parse_from(["usersod", "train", "--data", "d", "--esm", "e", "--out", "o", "--mode", "huge"]).is_err());
}

#[test]
fn unknown_flags_and_missing_arguments_fail() {
    let out = usersod(&["synth-gen", "--bogus", "1"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("--bogus"));
    assert!(!usersod(&["dig"]).status.success());
    assert!(!usersod(&[]).status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.toml");
    fs::write(&cfg, "num_scenes = 2\nnot_a_key = 1\n").unwrap();
    let out_dir = dir.path().join("scenes");
    let out = usersod(&[
        "synth-gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("not_a_key"), "{}", text(&out.stderr));
    assert!(!out_dir.exists());
}

#[test]
fn missing_input_is_reported_not_panicked() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = usersod(&[
        "dig",
        "--in",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("dug").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!text(&out.stderr).contains("panicked"));
}

#[test]
fn file_correction_keeps_undecided_proposals_pending() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let dug = dir.path().join("dug");
    let decisions = dir.path().join("decisions.jsonl");
    fs::write(&decisions, "").unwrap();
    let gen = usersod(&["synth-gen", "--seed", "3", "--scenes", "2", "--out", scenes.to_str().unwrap()]);
    assert!(gen.status.success(), "{}", text(&gen.stderr));
    let dig = usersod(&[
        "dig",
        "--in",
        scenes.to_str().unwrap(),
        "--correction",
        "file",
        "--decisions",
        decisions.to_str().unwrap(),
        "--out",
        dug.to_str().unwrap(),
    ]);
    assert!(dig.status.success(), "{}", text(&dig.stderr));
    assert!(dug.join("queue").exists());
}
