// SPDX-License-Identifier: Apache-2.0
//
// mathrec-stub-render LATEX_FILE OUT_PNG DPI FONT
//
// Deterministic stand-in for a TeX toolchain. Reads one formula, draws it
// with the built-in glyph renderer and writes a PNG. Exit 1 when the
// formula uses constructs the stub cannot lay out, 2 on bad arguments.
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "mathrec/errors.hpp"
#include "mathrec/latex_norm.hpp"
#include "mathrec/render.hpp"

int main(int argc, char** argv) {
  if (argc != 5) {
    std::cerr << "usage: mathrec-stub-render LATEX_FILE OUT_PNG DPI FONT\n";
    return 2;
  }
  std::ifstream in(argv[1]);
  if (!in) {
    std::cerr << "cannot read " << argv[1] << '\n';
    return 2;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  int dpi = 0;
  try {
    dpi = std::stoi(argv[3]);
  } catch (const std::exception&) {
    std::cerr << "bad dpi '" << argv[3] << "'\n";
    return 2;
  }
  try {
    const auto latex = mathrec::normalize(buf.str());
    mathrec::write_png(argv[2], mathrec::stub_render(latex, argv[4], dpi));
  } catch (const mathrec::Error& e) {
    std::cerr << mathrec::to_string(e.kind()) << ": " << e.what() << '\n';
    return e.kind() == mathrec::ErrorKind::CompileFailure || e.kind() == mathrec::ErrorKind::UnbalancedBraces ? 1 : 3;
  }
  return 0;
}
