use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonconf_core::harness::{compare_schemes, run_study, StudyConfig, COMPARED};
use nonconf_core::{Error, Result, Triangulation};

#[derive(Parser)]
#[command(name = "nonconf", version, about = "Convergence studies for lowest-order nonconforming fourth-order schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study and write `<output>.csv` and `<output>.json`.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare Morley, dG and C0IP errors level by level.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print statistics of a mesh file.
    MeshInfo { file: PathBuf },
}

fn run(config: PathBuf) -> Result<()> {
    let c = StudyConfig::load(config)?;
    let r = run_study(&c)?;
    println!("{} {} {} R={} S={} ({})", r.name, r.problem, r.scheme, r.r, r.s, r.reference);
    print!("{:>5} {:>8} {:>10} {:>6}", "level", "dofs", "h_max", "newton");
    for n in &c.norms {
        print!(" {:>12}", n.name());
    }
    println!();
    for l in &r.levels {
        print!("{:>5} {:>8} {:>10.4e} {:>6}", l.level, l.dofs, l.h_max, l.newton_iterations);
        for n in &c.norms {
            print!(" {:>12.4e}", l.errors[n]);
        }
        println!();
    }
    for (n, f) in &r.rates {
        println!("rate {:<10} {:>7.3} (residual {:.2e})", n.name(), f.rate, f.residual);
    }
    let (csv, json) = r.write(&c.output_stem())?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn compare(config: PathBuf) -> Result<()> {
    let c = StudyConfig::load(config)?;
    let r = compare_schemes(&c)?;
    print!("{:>5} {:>10}", "level", "h_max");
    for s in COMPARED {
        print!(" {:>12}", s.to_string());
    }
    println!(" {:>12} {:>12}", "oscillation", "max ratio");
    for l in &r.levels {
        print!("{:>5} {:>10.4e}", l.level, l.h_max);
        for s in COMPARED {
            print!(" {:>12.4e}", l.errors[&s]);
        }
        let worst = l.ratios.values().map(|q| q.max(1.0 / q)).fold(f64::NAN, f64::max);
        println!(" {:>12.4e} {:>12.3}", l.oscillation, worst);
    }
    let (csv, json) = r.write(&c.output_stem())?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn mesh_info(file: PathBuf) -> Result<()> {
    let m = Triangulation::load(file)?;
    println!("vertices        {}", m.num_vertices());
    println!("triangles       {}", m.num_triangles());
    println!("edges           {} ({} interior)", m.num_edges(), m.num_interior_edges());
    println!("h_max           {:e}", m.h_max());
    println!("shape_regular   {:e}", m.shape_regularity());
    println!("area            {:e}", m.total_area());
    println!("hash            {}", m.hash());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Run { config } => run(config),
        Command::Compare { config } => compare(config),
        Command::MeshInfo { file } => mesh_info(file),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        "config" => 3,
        "io" => 4,
        "mesh" | "format" => 5,
        "newton" => 6,
        "singular" => 7,
        _ => 1,
    }
}
