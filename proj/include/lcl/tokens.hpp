// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "lcl/universe.hpp"

namespace lcl {

using SymbolId = std::uint32_t;

/// A sequence element: either a continuous embedding or a label symbol.
struct Token {
  static Token continuous(Embedding values) { return Token{std::move(values), 0, false}; }
  static Token symbol_token(SymbolId id) { return Token{{}, id, true}; }

  Embedding values;
  SymbolId symbol = 0;
  bool is_symbol = false;

  bool operator==(const Token&) const = default;
};

/// A supervised position: logits at `position` should predict `symbol`.
struct Target {
  std::size_t position = 0;
  SymbolId symbol = 0;

  bool operator==(const Target&) const = default;
};

struct TokenSeq {
  std::vector<Token> tokens;
  std::vector<Target> targets;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const TokenSeq&) const = default;
};

}  // namespace lcl
