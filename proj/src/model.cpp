#include "prefmmt/model.hpp"

namespace prefmmt {

template class RewardModel<float>;
template class RewardModel<double>;

}  // namespace prefmmt
