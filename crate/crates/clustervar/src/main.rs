fn main() {
    std::process::exit(clustervar::cli::run());
}
