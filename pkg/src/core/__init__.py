# 探索空間とアーキテクチャ
