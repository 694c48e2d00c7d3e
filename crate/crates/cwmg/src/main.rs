fn main() {
    std::process::exit(cwmg::cli::run());
}
