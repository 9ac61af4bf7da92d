fn main() {
    std::process::exit(dpwate::cli::main_entry());
}
