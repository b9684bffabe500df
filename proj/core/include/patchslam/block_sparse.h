#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "patchslam/errors.h"

namespace patchslam {

// Sparse Cholesky factorization A = L L^T of a symmetric positive definite
// matrix made of B x B blocks. Only the lower block triangle is stored, one
// column of blocks at a time (rows sorted, the diagonal block first).
//
// Usage: analyze() with the lower-triangular block pattern of A, fill values
// through block(), factorize(), then solve(). The symbolic pass computes the
// fill-in of L in natural block order via the elimination tree, so the
// values written through block() already sit in the factor's storage.
template <int B>
class BlockSparseCholesky {
 public:
  using Block = Eigen::Matrix<double, B, B>;
  using Vector = Eigen::VectorXd;

  // `lower[c]` lists row indices r >= c with A(r, c) != 0. The diagonal is
  // always included.
  void analyze(int num_blocks, const std::vector<std::vector<int>>& lower) {
    n_ = num_blocks;
    cols_.assign(n_, Column{});
    std::vector<std::vector<int>> children(n_);
    std::vector<int> mark(n_, -1);

    for (int j = 0; j < n_; ++j) {
      std::vector<int>& rows = cols_[j].rows;
      auto add = [&](int r) {
        if (mark[r] != j) {
          mark[r] = j;
          rows.push_back(r);
        }
      };
      add(j);
      if (j < static_cast<int>(lower.size())) {
        for (int r : lower[j]) {
          if (r >= j) add(r);
        }
      }
      for (int c : children[j]) {
        for (int r : cols_[c].rows) {
          if (r > j) add(r);
        }
      }
      std::sort(rows.begin(), rows.end());
      if (rows.size() > 1) children[rows[1]].push_back(j);
      cols_[j].blocks.assign(rows.size(), Block::Zero());
    }

    row_lists_.assign(n_, {});
    for (int k = 0; k < n_; ++k) {
      const auto& rows = cols_[k].rows;
      for (std::size_t p = 1; p < rows.size(); ++p) {
        row_lists_[rows[p]].emplace_back(k, static_cast<int>(p));
      }
    }
    factorized_ = false;
  }

  int num_blocks() const { return n_; }

  std::size_t block_count() const {
    std::size_t n = 0;
    for (const Column& c : cols_) n += c.rows.size();
    return n;
  }

  void set_zero() {
    for (Column& c : cols_) {
      for (Block& b : c.blocks) b.setZero();
    }
    factorized_ = false;
  }

  // Slot of A(row, col) within column `col`, or -1 if structurally zero.
  int find(int row, int col) const {
    const auto& rows = cols_[col].rows;
    const auto it = std::lower_bound(rows.begin(), rows.end(), row);
    if (it == rows.end() || *it != row) return -1;
    return static_cast<int>(it - rows.begin());
  }

  // Lower-triangle block A(row, col), row >= col. Must be in the pattern.
  Block& block(int row, int col) {
    const int slot = find(row, col);
    if (slot < 0) throw IndexOutOfRange("block outside the sparsity pattern");
    return cols_[col].blocks[slot];
  }

  Block& slot(int col, int s) { return cols_[col].blocks[s]; }

  // In-place left-looking factorization. Throws SingularSystem if a pivot
  // block is not positive definite.
  void factorize() {
    for (int j = 0; j < n_; ++j) {
      Column& cj = cols_[j];
      for (const auto& [k, pos] : row_lists_[j]) {
        const Column& ck = cols_[k];
        const Block ljk_t = ck.blocks[pos].transpose();
        std::size_t q = 0;
        for (std::size_t p = pos; p < ck.rows.size(); ++p) {
          const int i = ck.rows[p];
          while (cj.rows[q] != i) ++q;
          cj.blocks[q].noalias() -= ck.blocks[p] * ljk_t;
        }
      }
      Eigen::LLT<Block> llt(cj.blocks[0]);
      if (llt.info() != Eigen::Success) {
        throw SingularSystem("block Cholesky: pivot block " +
                             std::to_string(j) + " is not positive definite");
      }
      const Block L = llt.matrixL();
      cj.blocks[0] = L;
      for (std::size_t q = 1; q < cj.rows.size(); ++q) {
        // L_qj <- A_qj L_jj^-T
        cj.blocks[q] = L.template triangularView<Eigen::Lower>()
                           .solve(cj.blocks[q].transpose())
                           .transpose();
      }
    }
    factorized_ = true;
  }

  Vector solve(const Vector& rhs) const {
    Vector x = rhs;
    for (int j = 0; j < n_; ++j) {
      const Column& c = cols_[j];
      auto xj = x.template segment<B>(B * j);
      xj = c.blocks[0].template triangularView<Eigen::Lower>().solve(
          Eigen::Matrix<double, B, 1>(xj));
      for (std::size_t q = 1; q < c.rows.size(); ++q) {
        x.template segment<B>(B * c.rows[q]).noalias() -= c.blocks[q] * xj;
      }
    }
    for (int j = n_ - 1; j >= 0; --j) {
      const Column& c = cols_[j];
      Eigen::Matrix<double, B, 1> acc = x.template segment<B>(B * j);
      for (std::size_t q = 1; q < c.rows.size(); ++q) {
        acc.noalias() -=
            c.blocks[q].transpose() * x.template segment<B>(B * c.rows[q]);
      }
      x.template segment<B>(B * j) =
          c.blocks[0].transpose().template triangularView<Eigen::Upper>().solve(
              acc);
    }
    return x;
  }

  bool factorized() const { return factorized_; }

 private:
  struct Column {
    std::vector<int> rows;
    std::vector<Block> blocks;
  };

  int n_ = 0;
  std::vector<Column> cols_;
  // For each row i: (column k < i, slot of L(i, k) in column k).
  std::vector<std::vector<std::pair<int, int>>> row_lists_;
  bool factorized_ = false;
};

}  // namespace patchslam
