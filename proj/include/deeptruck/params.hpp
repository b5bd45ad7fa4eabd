#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "deeptruck/error.hpp"

namespace deeptruck {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// A named matrix stored column-major inside a flat parameter vector.
struct TensorBlock {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
};

class ParamLayout {
 public:
  std::size_t add(std::string name, Index rows, Index cols) {
    blocks_.push_back(TensorBlock{std::move(name), size_, rows, cols});
    size_ += rows * cols;
    return blocks_.size() - 1;
  }

  Index size() const { return size_; }
  const std::vector<TensorBlock>& blocks() const { return blocks_; }
  const TensorBlock& operator[](std::size_t i) const { return blocks_.at(i); }

  const TensorBlock& find(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return b;
    throw Error(ErrorKind::Shape, "no tensor named '" + name + "'");
  }

  bool operator==(const ParamLayout& o) const {
    if (size_ != o.size_ || blocks_.size() != o.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      if (blocks_[i].name != o.blocks_[i].name || blocks_[i].rows != o.blocks_[i].rows ||
          blocks_[i].cols != o.blocks_[i].cols)
        return false;
    return true;
  }

 private:
  std::vector<TensorBlock> blocks_;
  Index size_ = 0;
};

inline Eigen::Map<MatrixXd> view(VectorXd& flat, const TensorBlock& b) {
  return {flat.data() + b.offset, b.rows, b.cols};
}

inline Eigen::Map<const MatrixXd> view(const VectorXd& flat, const TensorBlock& b) {
  return {flat.data() + b.offset, b.rows, b.cols};
}

inline bool all_finite(const VectorXd& x) { return x.allFinite(); }

}  // namespace deeptruck
