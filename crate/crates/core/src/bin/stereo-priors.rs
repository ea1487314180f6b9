fn main() -> std::process::ExitCode {
    stereo_priors::cli::run(std::env::args_os())
}
