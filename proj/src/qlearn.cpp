#include "darl/qlearn.hpp"

#include <limits>
#include <stdexcept>
#include <string>

#include "darl/rng.hpp"

namespace darl::qlearn {

namespace {

constexpr double kDqnBeta1 = 0.9;  // paper momentum for the Q-network

Vector flatten(const SelectionState& state) {
  return Eigen::Map<const Vector>(state.features.data(),
                                  state.features.size());
}

void write_state(std::ostream& os, const SelectionState& s) {
  const Eigen::Index rows = s.features.rows(), cols = s.features.cols();
  os.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  os.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  os.write(reinterpret_cast<const char*>(s.features.data()),
           static_cast<std::streamsize>(sizeof(double) * s.features.size()));
  os.write(s.selected.data(),
           static_cast<std::streamsize>(s.selected.size()));
}

SelectionState read_state(std::istream& is) {
  SelectionState s;
  Eigen::Index rows = 0, cols = 0;
  is.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  is.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  s.features = Matrix(rows, cols);
  is.read(reinterpret_cast<char*>(s.features.data()),
          static_cast<std::streamsize>(sizeof(double) * s.features.size()));
  s.selected.resize(cols);
  is.read(s.selected.data(), static_cast<std::streamsize>(cols));
  return s;
}

}  // namespace

bool SelectionState::fully_selected() const {
  for (char c : selected)
    if (!c) return false;
  return true;
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

const Transition& ReplayBuffer::sample(std::mt19937_64& rng) const {
  if (items_.empty()) throw std::logic_error("sampling empty replay buffer");
  return items_[uniform_index(rng, items_.size())];
}

void ReplayBuffer::save(std::ostream& os) const {
  const std::uint64_t cap = capacity_, next = next_, count = items_.size();
  os.write(reinterpret_cast<const char*>(&cap), sizeof(cap));
  os.write(reinterpret_cast<const char*>(&next), sizeof(next));
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& t : items_) {
    write_state(os, t.state);
    write_state(os, t.next);
    const std::int32_t action = t.action, reward = t.reward,
                       terminal = t.terminal ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&action), sizeof(action));
    os.write(reinterpret_cast<const char*>(&reward), sizeof(reward));
    os.write(reinterpret_cast<const char*>(&terminal), sizeof(terminal));
  }
}

ReplayBuffer ReplayBuffer::load(std::istream& is) {
  std::uint64_t cap = 0, next = 0, count = 0;
  is.read(reinterpret_cast<char*>(&cap), sizeof(cap));
  is.read(reinterpret_cast<char*>(&next), sizeof(next));
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  ReplayBuffer buf(cap);
  buf.next_ = next;
  buf.items_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Transition t;
    t.state = read_state(is);
    t.next = read_state(is);
    std::int32_t action = 0, reward = 0, terminal = 0;
    is.read(reinterpret_cast<char*>(&action), sizeof(action));
    is.read(reinterpret_cast<char*>(&reward), sizeof(reward));
    is.read(reinterpret_cast<char*>(&terminal), sizeof(terminal));
    t.action = action;
    t.reward = reward;
    t.terminal = terminal != 0;
    buf.items_.push_back(std::move(t));
  }
  if (!is) throw std::runtime_error("truncated replay buffer stream");
  return buf;
}

SelectionState init_state(const adv::AdvNets& nets, const Matrix& candidate_x) {
  if (candidate_x.cols() == 0)
    throw std::invalid_argument("init_state needs a nonempty candidate set");
  SelectionState s;
  s.features = nn::forward(nets.f, nets.f_spec, candidate_x);
  s.selected.assign(candidate_x.cols(), 0);
  return s;
}

SelectionState apply_action(const SelectionState& state, int action) {
  if (action < 0 || action >= state.n_candidates())
    throw std::invalid_argument("apply_action: action out of range");
  if (state.selected[action])
    throw std::invalid_argument("apply_action: instance " +
                                std::to_string(action) + " already selected");
  SelectionState next = state;
  next.features.col(action).setZero();
  next.selected[action] = 1;
  return next;
}

Vector q_values(const ParamSet& dqn, const MlpSpec& spec,
                const SelectionState& state) {
  return nn::forward(dqn, spec, flatten(state)).col(0);
}

int select_action(const ParamSet& dqn, const MlpSpec& spec,
                  const SelectionState& state, double epsilon,
                  std::mt19937_64& rng) {
  if (epsilon < 0.0 || epsilon > 1.0)
    throw std::invalid_argument("select_action: epsilon must be in [0,1]");
  std::vector<int> legal;
  for (int i = 0; i < state.n_candidates(); ++i)
    if (!state.selected[i]) legal.push_back(i);
  if (legal.empty())
    throw std::logic_error("select_action: no legal action left");

  if (uniform_real(rng) < epsilon)
    return legal[uniform_index(rng, legal.size())];

  const Vector q = q_values(dqn, spec, state);
  int best = legal.front();
  for (int a : legal)
    if (q(a) > q(best)) best = a;
  return best;
}

double max_legal_q(const ParamSet& dqn, const MlpSpec& spec,
                   const SelectionState& state) {
  const Vector q = q_values(dqn, spec, state);
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < state.n_candidates(); ++i)
    if (!state.selected[i]) best = std::max(best, q(i));
  return std::isfinite(best) ? best : 0.0;
}

std::optional<double> td_update(ParamSet& dqn, const MlpSpec& spec,
                                const ReplayBuffer& buffer, int batch_size,
                                double gamma, double lr,
                                std::mt19937_64& rng) {
  if (buffer.size() < static_cast<std::size_t>(batch_size))
    return std::nullopt;

  std::vector<const Transition*> batch(batch_size);
  for (int i = 0; i < batch_size; ++i) batch[i] = &buffer.sample(rng);

  Matrix input(spec.input_dim(), batch_size);
  for (int i = 0; i < batch_size; ++i)
    input.col(i) = flatten(batch[i]->state);

  nn::ForwardCache cache;
  const Matrix q = nn::forward(dqn, spec, input, &cache);

  // targets equal the prediction everywhere except the taken action's slot,
  // so only that slot contributes loss and gradient
  Matrix targets = q;
  for (int i = 0; i < batch_size; ++i) {
    const Transition& t = *batch[i];
    double v = t.reward;
    if (!t.terminal) v += gamma * max_legal_q(dqn, spec, t.next);
    targets(t.action, i) = v;
  }

  const double n = static_cast<double>(batch_size);
  const Matrix diff = q - targets;
  const double loss = diff.squaredNorm() / n;
  auto bp = nn::backward(dqn, spec, cache, 2.0 * diff / n);
  nn::adam_step(dqn, bp.grads, lr, kDqnBeta1);
  return loss;
}

}  // namespace darl::qlearn
