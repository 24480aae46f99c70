fn main() {
    std::process::exit(uft::cli::main_entry());
}
