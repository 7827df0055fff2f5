fn main() -> std::process::ExitCode {
    oramlab::cli::main_entry()
}
