use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use vstore::config::ServerConfig;
use vstore::sim::{run_bench, run_sim, MetricsReport, SimConfig};
use vstore::tcp::{run_server, TcpTransport};
use vstore::ugit::Repo;
use vstore::{Client, VersionId};

#[derive(Parser)]
#[command(
    name = "vstore",
    version,
    about = "Immutable versioned key-value store"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workload on the deterministic in-process simulator.
    Sim {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a workload against loopback TCP servers.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve one node until killed.
    Server {
        #[arg(long)]
        config: PathBuf,
    },
    /// Git-like version control on top of a running cluster.
    Ugit {
        #[command(subcommand)]
        command: UgitCommand,
    },
}

#[derive(clap::Args)]
struct Remote {
    /// Repository name; all objects live under keys derived from it.
    #[arg(long)]
    repo_key: String,
    /// Node config file naming the cluster to talk to.
    #[arg(long)]
    server: PathBuf,
    #[arg(long, default_value = "ugit")]
    user: String,
}

#[derive(Subcommand)]
enum UgitCommand {
    /// Snapshot a directory as a new commit and print its version.
    Commit {
        #[command(flatten)]
        remote: Remote,
        #[arg(long, short)]
        message: String,
        /// Parent commit; omit for the first commit.
        #[arg(long)]
        parent: Option<VersionId>,
        /// Directory to snapshot.
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
    /// Write the files of a commit into a directory.
    Checkout {
        #[command(flatten)]
        remote: Remote,
        #[arg(long)]
        parent: VersionId,
        #[arg(long)]
        dest: PathBuf,
    },
    /// Print the first-parent history of a commit, one JSON object per line.
    Log {
        #[command(flatten)]
        remote: Remote,
        #[arg(long)]
        parent: VersionId,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Merge two commits and print the merge commit's version.
    Merge {
        #[command(flatten)]
        remote: Remote,
        #[arg(long, num_args = 1, required = true)]
        parent: Vec<VersionId>,
        #[arg(long, short)]
        message: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns false when a workload reported invariant violations.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sim { config } => report(run_sim(&SimConfig::load(&config)?)?),
        Command::Bench { config } => report(run_bench(&SimConfig::load(&config)?)?),
        Command::Server { config } => {
            let cfg = ServerConfig::load(&config)?;
            let handle =
                run_server(&cfg).with_context(|| format!("starting node {}", cfg.node_id))?;
            println!("listening on {}", handle.addr);
            loop {
                std::thread::park();
            }
        }
        Command::Ugit { command } => ugit(command).map(|()| true),
    }
}

fn report(r: MetricsReport) -> Result<bool> {
    print!("{}", r.to_ndjson());
    for v in &r.violations {
        eprintln!("violation: {v}");
    }
    Ok(r.is_ok())
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn with_repo<T>(remote: &Remote, f: impl FnOnce(&Repo) -> Result<T>) -> Result<T> {
    let cfg = ServerConfig::load(&remote.server)?;
    let net = TcpTransport::new(cfg.addrs()?);
    let client = Client::new(&net, cfg.ring()?, cfg.params(), &remote.user);
    let repo = Repo::open(client, &remote.repo_key);
    f(&repo)
}

fn ugit(cmd: UgitCommand) -> Result<()> {
    match cmd {
        UgitCommand::Commit {
            remote,
            message,
            parent,
            dir,
        } => with_repo(&remote, |repo| {
            let parent = parent.unwrap_or(VersionId::ROOT);
            let v = repo.commit(&dir, &message, &remote.user, &parent, now())?;
            println!("{v}");
            Ok(())
        }),
        UgitCommand::Checkout {
            remote,
            parent,
            dest,
        } => with_repo(&remote, |repo| {
            let files = repo.checkout(&parent, &dest)?;
            println!("{files} files written to {}", dest.display());
            Ok(())
        }),
        UgitCommand::Log {
            remote,
            parent,
            limit,
        } => with_repo(&remote, |repo| {
            for c in repo.log(&parent, limit)? {
                println!("{}", serde_json::to_string(&c)?);
            }
            Ok(())
        }),
        UgitCommand::Merge {
            remote,
            parent,
            message,
        } => {
            let [a, b] = parent.as_slice() else {
                bail!("merge takes exactly two --parent commits");
            };
            with_repo(&remote, |repo| {
                let message = message.unwrap_or_else(|| format!("merge {a} into {b}"));
                let v = repo.merge(a, b, &message, &remote.user, now())?;
                println!("{v}");
                Ok(())
            })
        }
    }
}
