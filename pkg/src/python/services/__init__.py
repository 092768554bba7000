# Сервисы SAWT: журнал, пул потоков, запись результатов
