#include "migratekit/cli.hpp"

int main(int argc, char** argv) { return migratekit::run_cli(argc, argv); }
