fn main() -> std::process::ExitCode {
    cahn_spectral::cli::main()
}
