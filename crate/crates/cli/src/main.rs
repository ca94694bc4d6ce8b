use std::io::{self, BufReader};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut stdin = BufReader::new(io::stdin());
    let code = formulink::cli::run(std::env::args_os(), &mut stdin, &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
