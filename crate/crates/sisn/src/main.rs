fn main() -> std::process::ExitCode {
    sisn::cli_main()
}
