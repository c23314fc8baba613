// SPDX-License-Identifier: Apache-2.0
#include "dssm/cli.hpp"

int main(int argc, char** argv) { return dssm::run_cli(argc, argv); }
