//! Command-line front end. Every subcommand resolves a flat `key = value`
//! configuration (defaults, then `--config` file, then included files, then
//! `--key value` flags) and writes the resolved document next to its outputs.

mod commands;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Subcommands and their one-line summaries.
pub const SUBCOMMANDS: [(&str, &str); 8] = [
    ("gen-data", "write a procedural HR corpus"),
    ("degrade", "synthesize LR images from a directory of HR images"),
    ("train", "train the multi-step teacher"),
    ("distill", "distill a teacher checkpoint into a one-step student"),
    ("sample", "super-resolve LR images with a checkpoint"),
    ("eval", "PSNR-Y / SSIM-Y table of outputs against references"),
    ("align", "align a captured photo to its source image"),
    ("sweep", "guidance-scale, semantic or guidance-style ablation table"),
];

pub fn usage() -> String {
    let mut s = String::from("usage: flowsr <subcommand> [--config FILE] [--key value ...]\n\nsubcommands:\n");
    for (name, about) in SUBCOMMANDS {
        s.push_str(&format!("  {name:<9} {about}\n"));
    }
    s
}

/// Exit status of an error: 2 for I/O and parse failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => 2,
        _ => 1,
    }
}

/// Run `args` (without the program name), reporting to `out` and `err`.
pub fn dispatch(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(cmd) = args.first() else {
        let _ = write!(err, "{}", usage());
        return 2;
    };
    if cmd == "--help" || cmd == "help" {
        let _ = write!(out, "{}", usage());
        return 0;
    }
    let rest = &args[1..];
    let result = match cmd.as_str() {
        "gen-data" => commands::gen_data(rest, out),
        "degrade" => commands::degrade(rest, out),
        "train" => commands::train(rest, out),
        "distill" => commands::distill(rest, out),
        "sample" => commands::sample(rest, out),
        "eval" => commands::eval(rest, out),
        "align" => commands::align(rest, out),
        "sweep" => commands::sweep(rest, out),
        other => {
            let _ = write!(err, "unknown subcommand {other:?}\n\n{}", usage());
            return 2;
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "flowsr {cmd}: {e}");
            exit_code(&e)
        }
    }
}

/// A resolved configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    doc: KvDoc,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_known(defaults: &KvDoc, doc: &KvDoc, origin: &str) -> Result<()> {
    match doc.keys().find(|k| defaults.get_raw(k).is_none()) {
        Some(k) => Err(Error::Config(format!("unknown key {k} in {origin}"))),
        None => Ok(()),
    }
}

impl Settings {
    /// Resolve `args` against `defaults`. Keys listed in `includes` name
    /// further config files merged after `--config` and before flags; their
    /// contents are inlined, so the resolved document stands alone.
    pub fn resolve(defaults: KvDoc, args: &[String], includes: &[&str]) -> Result<Self> {
        let mut flags = KvDoc::new();
        let mut config_path = None;
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected a --flag, got {arg:?}")))?;
            let value = it
                .next()
                .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?;
            if key == "config" {
                config_path = Some(PathBuf::from(value));
            } else {
                flags.set(&key.replace('-', "_"), value);
            }
        }
        check_known(&defaults, &flags, "flags")?;
        let mut doc = defaults.clone();
        if let Some(path) = &config_path {
            let file = KvDoc::parse(&read_text(path)?)?;
            check_known(&defaults, &file, &path.display().to_string())?;
            doc.merge(&file);
        }
        for inc in includes {
            let path = flags.get_raw(inc).or_else(|| doc.get_raw(inc)).unwrap_or("").to_string();
            if !path.is_empty() {
                let file = KvDoc::parse(&read_text(Path::new(&path))?)?;
                check_known(&defaults, &file, &path)?;
                doc.merge(&file);
            }
            // the included values are now inline
            doc.set(inc, "");
        }
        doc.merge(&flags);
        for inc in includes {
            if flags.get_raw(inc).is_some() {
                doc.set(inc, "");
            }
        }
        Ok(Settings { doc })
    }

    pub fn doc(&self) -> &KvDoc {
        &self.doc
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        self.doc.require(key)
    }

    pub fn string(&self, key: &str) -> String {
        self.doc.get_raw(key).unwrap_or("").to_string()
    }

    /// A path that must be given.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        let v = self.string(key);
        if v.is_empty() {
            return Err(Error::contract(format!("--{} is required", key.replace('_', "-"))));
        }
        Ok(PathBuf::from(v))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.doc.serialize()).map_err(|e| Error::io(path, e))
    }
}
