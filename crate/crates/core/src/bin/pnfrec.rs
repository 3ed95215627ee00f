fn main() -> std::process::ExitCode {
    pnfrec::cli::main()
}
