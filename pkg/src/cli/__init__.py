# コマンドラインインターフェース
