// SPDX-License-Identifier: Apache-2.0
#include "mathrec/cli.hpp"

int main(int argc, char** argv) { return mathrec::cli::run(argc, argv); }
