# 探索アルゴリズム
