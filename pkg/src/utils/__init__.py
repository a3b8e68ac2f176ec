# 例外・ログ・乱数・統計の共通処理
