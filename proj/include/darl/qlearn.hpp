#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "darl/adversarial.hpp"
#include "darl/nn.hpp"

namespace darl::qlearn {

using nn::Matrix;
using nn::MlpSpec;
using nn::ParamSet;
using nn::Vector;

/// MDP state: one feature column per candidate; selected columns are zeroed
/// so the state size stays d x N_c for the whole episode.
struct SelectionState {
  Matrix features;
  std::vector<char> selected;

  int n_candidates() const { return static_cast<int>(selected.size()); }
  bool fully_selected() const;
};

struct Transition {
  SelectionState state;
  int action = -1;
  int reward = 0;  // +1 or -1
  SelectionState next;
  bool terminal = false;
};

/// Fixed-capacity ring buffer with oldest-first eviction and uniform
/// sampling with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& sample(std::mt19937_64& rng) const;
  const Transition& at(std::size_t i) const { return items_[i]; }

  void save(std::ostream& os) const;
  static ReplayBuffer load(std::istream& is);

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;  // ring write position once full
  std::vector<Transition> items_;
};

/// s_0: F applied to each candidate, nothing selected.
SelectionState init_state(const adv::AdvNets& nets, const Matrix& candidate_x);

/// Zero the chosen column and mark it selected. Throws on re-selection.
SelectionState apply_action(const SelectionState& state, int action);

/// One DQN forward pass on the column-major flattened state.
Vector q_values(const ParamSet& dqn, const MlpSpec& spec,
                const SelectionState& state);

/// Epsilon-greedy over unselected actions; greedy ties break to the lowest
/// index. Throws if no action is legal.
int select_action(const ParamSet& dqn, const MlpSpec& spec,
                  const SelectionState& state, double epsilon,
                  std::mt19937_64& rng);

/// One Adam step on the mean squared TD error of the taken actions, targets
/// R (terminal) or R + gamma * max legal Q(s') with the target held constant.
/// Returns nullopt (no-op) while the buffer holds fewer than batch_size
/// transitions.
std::optional<double> td_update(ParamSet& dqn, const MlpSpec& spec,
                                const ReplayBuffer& buffer, int batch_size,
                                double gamma, double lr, std::mt19937_64& rng);

/// Greedy value of a state: max over legal actions, 0 if none.
double max_legal_q(const ParamSet& dqn, const MlpSpec& spec,
                   const SelectionState& state);

}  // namespace darl::qlearn
