use clap::Parser;

#[cfg(unix)]
fn restore_default_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn restore_default_sigpipe() {}

fn main() {
    restore_default_sigpipe();
    let cli = air_opt::cli::Cli::parse();
    std::process::exit(air_opt::cli::run(cli.command));
}
