fn main() -> std::process::ExitCode {
    glen::cli::main()
}
