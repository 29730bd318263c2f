fn main() -> std::process::ExitCode {
    albedo::cli::run(std::env::args_os())
}
