fn main() -> std::process::ExitCode {
    whiten_cli::run(std::env::args_os())
}
