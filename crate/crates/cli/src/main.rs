use anyhow::Context;
use clap::{Parser, Subcommand};
use goalspace_core::arm_env::{observation_dataset, EnvKind};
use goalspace_core::campaign::{run_campaign, Algorithm, CampaignConfig, TrainingOverrides};
use goalspace_core::plots::emit_plots;
use goalspace_core::repr_learn::{
    fit_isomap, fit_neural, fit_pca, Dataset, EmbeddingModel, Variant,
};
use goalspace_core::serialize::{save_model, write_loss_csv, write_pgm, SavedModel};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "goalspace", version, about = "Goal-space learning and exploration campaigns")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a passive observation dataset (PGM images + states)
    Observe {
        #[arg(long, default_value = "armball")]
        env: EnvKind,
        #[arg(short = 'n', long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one embedding model on a fresh observation dataset
    Fit {
        #[arg(long, default_value = "armball")]
        env: EnvKind,
        #[arg(long)]
        variant: Variant,
        #[arg(short = 'l', long, default_value_t = 2)]
        latent: usize,
        #[arg(short = 'n', long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        kappa: usize,
        #[arg(long)]
        updates: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a single (env, algorithm, latent, seed) exploration cell
    Explore {
        #[arg(long, default_value = "armball")]
        env: EnvKind,
        #[arg(long, default_value = "rpe")]
        algo: Algorithm,
        #[arg(short = 'l', long, default_value_t = 2)]
        latent: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        n_observation: usize,
        #[arg(long, default_value_t = 100)]
        n_bootstrap: usize,
        #[arg(long, default_value_t = 2000)]
        n_exploration: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a campaign grid; every cell's status lands in manifest.json
    Campaign {
        /// JSON file deserializing into the campaign config
        #[arg(long, conflicts_with = "paper_scale")]
        config: Option<PathBuf>,
        /// Campaign-level seed (overrides the config file)
        #[arg(long)]
        seed: Option<u64>,
        /// Full algorithm roster at published scales instead of desk defaults
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG figures and a long-format CSV from a result tree
    Plot {
        /// Campaign output directory
        tree: PathBuf,
        /// Where figures go (default: <tree>/plots)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Observe {
            env,
            count,
            seed,
            out,
        } => {
            std::fs::create_dir_all(&out)?;
            let (states, images) = observation_dataset(env, count, seed);
            for (i, row) in images.rows().into_iter().enumerate() {
                let img = goalspace_core::arm_env::image_from_flat(&row.to_owned());
                write_pgm(&out.join(format!("obs_{i:05}.pgm")), &img)?;
            }
            let file = std::fs::File::create(out.join("states.jsonl"))?;
            let mut w = std::io::BufWriter::new(file);
            for s in &states {
                serde_json::to_writer(&mut w, s)?;
                std::io::Write::write_all(&mut w, b"\n")?;
            }
            println!("wrote {count} images and states.jsonl to {}", out.display());
        }
        Cmd::Fit {
            env,
            variant,
            latent,
            count,
            seed,
            kappa,
            updates,
            batch_size,
            learning_rate,
            warmup,
            out,
        } => {
            std::fs::create_dir_all(&out)?;
            let (_, images) = observation_dataset(env, count, seed);
            let data = Dataset::new(images)?;
            let model = match variant {
                Variant::Pca => EmbeddingModel::Pca(fit_pca(&data, latent)?),
                Variant::Isomap => EmbeddingModel::Isomap(fit_isomap(&data, latent, kappa)?),
                v => {
                    let overrides = TrainingOverrides {
                        ae_updates: updates,
                        vae_updates: updates,
                        warmup_updates: warmup,
                        batch_size,
                        learning_rate,
                    };
                    let cfg = overrides.resolve(v, seed);
                    let (model, loss) = fit_neural(&data, latent, v, &cfg)?;
                    write_loss_csv(&out.join("loss.csv"), &loss)?;
                    EmbeddingModel::Neural(model)
                }
            };
            save_model(&out.join("embedding.model"), &SavedModel::Embedding(model))?;
            println!("fitted {variant} (l = {latent}) on {count} observations of {env}");
            println!("saved to {}", out.join("embedding.model").display());
        }
        Cmd::Explore {
            env,
            algo,
            latent,
            seed,
            n_observation,
            n_bootstrap,
            n_exploration,
            out,
        } => {
            let cfg = CampaignConfig {
                environments: vec![env],
                algorithms: vec![algo],
                latent_dims: vec![latent],
                seeds: vec![seed],
                n_observation,
                n_bootstrap,
                n_exploration,
                ..CampaignConfig::desk_default(out)
            };
            let manifest = run_campaign(&cfg)?;
            report(&manifest.cells);
            if !manifest.all_ok() {
                std::process::exit(1);
            }
        }
        Cmd::Campaign {
            config,
            seed,
            paper_scale,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<CampaignConfig>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => {
                    let out = out.clone().unwrap_or_else(|| PathBuf::from("campaign-out"));
                    if paper_scale {
                        CampaignConfig::paper_scale(out)
                    } else {
                        CampaignConfig::desk_default(out)
                    }
                }
            };
            if let Some(s) = seed {
                cfg.campaign_seed = s;
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let manifest = run_campaign(&cfg)?;
            report(&manifest.cells);
            println!("manifest: {}", cfg.output_dir.join("manifest.json").display());
            if !manifest.all_ok() {
                std::process::exit(1);
            }
        }
        Cmd::Plot { tree, out } => {
            let out = out.unwrap_or_else(|| tree.join("plots"));
            let written = emit_plots(&tree, &out)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn report(cells: &[goalspace_core::campaign::CellResult]) {
    let ok = cells.iter().filter(|c| c.status == "ok").count();
    for c in cells {
        match (&c.status[..], c.final_klc, &c.error) {
            ("ok", Some(klc), _) => println!("ok      {} (final KLC {klc:.3})", c.path),
            (_, _, Some(err)) => println!("failed  {}: {err}", c.path),
            _ => println!("{:7} {}", c.status, c.path),
        }
    }
    println!("{ok}/{} cells succeeded", cells.len());
}
